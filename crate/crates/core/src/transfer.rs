//! Epicardium-to-torso transfer operator.
//!
//! Nodes of the torso mesh split into the torso surface `Γ`, the epicardium
//! `Γ_H` and the interior `I`. With Dirichlet data `u` on `Γ_H` and natural
//! boundary conditions on `Γ`, eliminating `I` gives
//! `A^Γ = S⁻¹ A_ΓI A_II⁻¹ A_IH` with `S = A_ΓΓ − A_ΓI A_II⁻¹ A_IΓ`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, ConductivityField};
use crate::field::SpaceTimeField;
use crate::mesh::{BoundarySets, ElectrodeSet, Mesh};

#[derive(Clone, Debug)]
pub struct TransferMatrix {
    /// `N_Σ × N_V`.
    a_sigma: DMatrix<f64>,
    /// `|Γ| × N_V`.
    a_gamma: DMatrix<f64>,
    /// Row of `A^Γ` used by each electrode.
    electrode_rows: Vec<usize>,
    pub mesh_hash: u64,
    pub conductivity_hash: u64,
}

/// Refuses meshes where a triangle touches both boundary loops, since the
/// elimination relies on `A_ΓΓ_H = 0`.
pub fn check_separated(mesh: &Mesh, bounds: &BoundarySets) -> Result<()> {
    let mut tag = vec![0u8; mesh.n_vertices()];
    for &v in &bounds.gamma {
        tag[v] = 1;
    }
    for &v in &bounds.gamma_h {
        tag[v] = 2;
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let mut seen = 0u8;
        for &v in tri {
            seen |= tag[v];
        }
        if seen == 3 {
            return Err(Error::Topology(format!(
                "triangle {t} touches both the torso surface and the epicardium"
            )));
        }
    }
    Ok(())
}

impl TransferMatrix {
    pub fn build(
        mesh: &Mesh,
        cond: &ConductivityField,
        bounds: &BoundarySets,
        electrodes: &ElectrodeSet,
    ) -> Result<Self> {
        if cond.len() != mesh.n_triangles() {
            return Err(Error::dim("conductivity per triangle", mesh.n_triangles(), cond.len()));
        }
        check_separated(mesh, bounds)?;
        if bounds.interior.is_empty() {
            return Err(Error::Topology("torso mesh has no interior nodes".into()));
        }
        let (g, h, i) = (&bounds.gamma, &bounds.gamma_h, &bounds.interior);
        let a_ii = assemble_stiffness(mesh, cond, i, i)?;
        let a_ig = assemble_stiffness(mesh, cond, i, g)?;
        let a_ih = assemble_stiffness(mesh, cond, i, h)?;
        let a_gg = assemble_stiffness(mesh, cond, g, g)?.to_dense();

        let chol = a_ii.cholesky()?;
        // A_II⁻¹ [A_IΓ | A_IH] in one multi-column solve
        let mut rhs = DMatrix::zeros(i.len(), g.len() + h.len());
        for (r, c, v) in a_ig.triplets() {
            rhs[(r, c)] = v;
        }
        for (r, c, v) in a_ih.triplets() {
            rhs[(r, g.len() + c)] = v;
        }
        let sol = chol.solve(&rhs);
        let a_gi = a_ig.to_dense().transpose();
        let prod = &a_gi * &sol;
        let schur = a_gg - prod.columns(0, g.len());
        let rhs_g = prod.columns(g.len(), h.len()).into_owned();

        let schur = nalgebra::Cholesky::new(schur).ok_or_else(|| {
            Error::Singular("Schur complement on the torso surface is not positive definite".into())
        })?;
        let a_gamma = schur.solve(&rhs_g);
        if a_gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("transfer matrix has non-finite entries".into()));
        }

        let mut pos = vec![usize::MAX; mesh.n_vertices()];
        for (k, &v) in g.iter().enumerate() {
            pos[v] = k;
        }
        let electrode_rows = electrodes
            .nodes
            .iter()
            .map(|&v| match pos.get(v) {
                Some(&k) if k != usize::MAX => Ok(k),
                _ => Err(Error::Topology(format!("electrode node {v} is not on the torso surface"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            a_sigma: a_gamma.select_rows(&electrode_rows),
            a_gamma,
            electrode_rows,
            mesh_hash: mesh.fingerprint(),
            conductivity_hash: cond.fingerprint(),
        })
    }

    /// A transfer matrix given directly, for synthetic problems.
    pub fn from_matrix(a_sigma: DMatrix<f64>) -> Self {
        let rows = (0..a_sigma.nrows()).collect();
        Self {
            a_gamma: a_sigma.clone(),
            a_sigma,
            electrode_rows: rows,
            mesh_hash: 0,
            conductivity_hash: 0,
        }
    }

    /// Same operator restricted to a different electrode subset, given as rows
    /// of `A^Γ`.
    pub fn with_electrode_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.a_gamma.nrows()) {
            return Err(Error::dim("electrode row", self.a_gamma.nrows(), r));
        }
        Ok(Self {
            a_sigma: self.a_gamma.select_rows(rows),
            electrode_rows: rows.to_vec(),
            ..self.clone()
        })
    }

    pub fn a_sigma(&self) -> &DMatrix<f64> {
        &self.a_sigma
    }

    pub fn a_gamma(&self) -> &DMatrix<f64> {
        &self.a_gamma
    }

    pub fn electrode_rows(&self) -> &[usize] {
        &self.electrode_rows
    }

    /// `N_Σ`.
    pub fn n_electrodes(&self) -> usize {
        self.a_sigma.nrows()
    }

    /// `N_V`.
    pub fn n_epicardial(&self) -> usize {
        self.a_sigma.ncols()
    }

    /// `(I ⊗ A^Σ) u`.
    pub fn apply(&self, u: &SpaceTimeField) -> Result<SpaceTimeField> {
        if u.n_space() != self.n_epicardial() {
            return Err(Error::dim("transfer input", self.n_epicardial(), u.n_space()));
        }
        Ok(SpaceTimeField::from_matrix(&(&self.a_sigma * u.matrix())))
    }

    /// `(I ⊗ A^Σ)ᵀ z`.
    pub fn apply_adjoint(&self, z: &SpaceTimeField) -> Result<SpaceTimeField> {
        if z.n_space() != self.n_electrodes() {
            return Err(Error::dim("transfer adjoint input", self.n_electrodes(), z.n_space()));
        }
        Ok(SpaceTimeField::from_matrix(&self.a_sigma.tr_mul(&z.matrix())))
    }

    /// Coordinate text with a provenance header.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# ecgi-transfer v1 mesh={:016x} sigma={:016x}",
            self.mesh_hash, self.conductivity_hash
        );
        let _ = writeln!(out, "{} {}", self.a_sigma.nrows(), self.a_sigma.ncols());
        for i in 0..self.a_sigma.nrows() {
            for j in 0..self.a_sigma.ncols() {
                let _ = writeln!(out, "{i} {j} {:.16e}", self.a_sigma[(i, j)]);
            }
        }
        out
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
