use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point, Region};

/// Symmetric 2×2 tensor stored as `[xx, xy, yy]`.
pub type SymTensor = [f64; 3];

pub fn isotropic(s: f64) -> SymTensor {
    [s, 0.0, s]
}

/// `σ_t I + (σ_f − σ_t) f fᵀ` for a unit fiber direction `f`.
pub fn fiber_tensor(fiber: Point, along: f64, across: f64) -> SymTensor {
    let n = fiber[0].hypot(fiber[1]);
    let (fx, fy) = (fiber[0] / n, fiber[1] / n);
    let d = along - across;
    [across + d * fx * fx, d * fx * fy, across + d * fy * fy]
}

fn eigenvalues(t: &SymTensor) -> (f64, f64) {
    let mean = 0.5 * (t[0] + t[2]);
    let r = (0.5 * (t[0] - t[2])).hypot(t[1]);
    (mean - r, mean + r)
}

/// Per-triangle intracellular and extracellular conductivities (S/m).
#[derive(Clone, Debug)]
pub struct ConductivityField {
    intracellular: Vec<SymTensor>,
    extracellular: Vec<SymTensor>,
    total: Vec<SymTensor>,
    zeta: f64,
}

impl ConductivityField {
    pub fn new(intracellular: Vec<SymTensor>, extracellular: Vec<SymTensor>) -> Result<Self> {
        if intracellular.len() != extracellular.len() {
            return Err(Error::dim("conductivity tensors", intracellular.len(), extracellular.len()));
        }
        let total: Vec<SymTensor> = intracellular
            .iter()
            .zip(&extracellular)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            .collect();
        let mut zeta = 1.0_f64;
        for (t, s) in total.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite conductivity on triangle {t}")));
            }
            let (lo, hi) = eigenvalues(s);
            if lo <= 0.0 {
                return Err(Error::Config(format!(
                    "conductivity on triangle {t} is not positive definite"
                )));
            }
            zeta = zeta.max(hi).max(1.0 / lo);
        }
        for (t, s) in intracellular.iter().enumerate() {
            if eigenvalues(s).0 < 0.0 {
                return Err(Error::Config(format!(
                    "intracellular conductivity on triangle {t} is indefinite"
                )));
            }
        }
        Ok(Self {
            intracellular,
            extracellular,
            total,
            zeta,
        })
    }

    /// Same scalar conductivity everywhere, no intracellular part.
    pub fn uniform(n_triangles: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![[0.0; 3]; n_triangles], vec![isotropic(sigma); n_triangles])
    }

    /// Builds the field triangle by triangle from the region label and the
    /// centroid; `f` returns `(σ_i, σ_e)`. Rejects intracellular conductivity
    /// outside the myocardium.
    pub fn from_regions(
        mesh: &Mesh,
        mut f: impl FnMut(Region, Point) -> (SymTensor, SymTensor),
    ) -> Result<Self> {
        let mut intra = Vec::with_capacity(mesh.n_triangles());
        let mut extra = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let region = mesh.regions()[t];
            let (si, se) = f(region, mesh.centroid(t));
            if region != Region::Myocardium && si.iter().any(|&v| v != 0.0) {
                return Err(Error::Config(format!(
                    "intracellular conductivity must vanish in {region}"
                )));
            }
            intra.push(si);
            extra.push(se);
        }
        Self::new(intra, extra)
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// `σ = σ_i + σ_e`.
    pub fn total(&self) -> &[SymTensor] {
        &self.total
    }

    pub fn intracellular(&self) -> &[SymTensor] {
        &self.intracellular
    }

    pub fn extracellular(&self) -> &[SymTensor] {
        &self.extracellular
    }

    /// Ellipticity bound: every eigenvalue of `σ` lies in `[1/ζ, ζ]`.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        let s = |v: &Vec<SymTensor>| v.iter().map(|t| [c * t[0], c * t[1], c * t[2]]).collect();
        Self::new(s(&self.intracellular), s(&self.extracellular))
    }

    /// Keeps the tensors of the listed triangles.
    pub fn restrict(&self, triangles: &[usize]) -> Result<Self> {
        Self::new(
            triangles.iter().map(|&t| self.intracellular[t]).collect(),
            triangles.iter().map(|&t| self.extracellular[t]).collect(),
        )
    }

    /// FNV-1a hash over the bit patterns of all tensors.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::mesh::Fnv::new();
        for t in self.intracellular.iter().chain(&self.extracellular) {
            for v in t {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }
}
