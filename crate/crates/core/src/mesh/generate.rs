//! Polar-grid generator for a circular torso with an eccentric circular heart.
//!
//! All rings share the same angular positions, so the torso annulus, the
//! myocardium annulus and the blood disk are conforming along the epicardium
//! and the endocardium. The torso rings are blended between the epicardial
//! circle (centred on the heart) and the torso circle (centred at the origin).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Mesh, Point, Region};
use crate::error::{Error, Result};

/// Two mirrored elliptical lungs at `(±center_x, center_y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LungConfig {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_x: f64,
    pub semi_axis_y: f64,
}

impl LungConfig {
    fn contains(&self, p: Point) -> bool {
        [-self.center_x, self.center_x].iter().any(|&cx| {
            let dx = (p[0] - cx) / self.semi_axis_x;
            let dy = (p[1] - self.center_y) / self.semi_axis_y;
            dx * dx + dy * dy <= 1.0
        })
    }

    fn boundary_samples(&self) -> impl Iterator<Item = Point> + '_ {
        (0..720).flat_map(move |k| {
            let a = 2.0 * PI * k as f64 / 720.0;
            [-self.center_x, self.center_x].map(|cx| {
                [cx + self.semi_axis_x * a.cos(), self.center_y + self.semi_axis_y * a.sin()]
            })
        })
    }
}

/// Lengths in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub torso_radius: f64,
    /// Epicardial radius.
    pub heart_radius: f64,
    pub heart_offset: Point,
    pub myocardium_thickness: f64,
    /// Nodes per ring; equals the number of epicardial and torso-surface nodes.
    pub angular_resolution: usize,
    /// Element layers between epicardium and torso surface.
    pub torso_layers: usize,
    pub myocardium_layers: usize,
    pub blood_layers: usize,
    /// Thickness ratio of the outermost to the innermost torso layer.
    pub radial_grading: f64,
    pub lungs: Option<LungConfig>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            torso_radius: 100.0,
            heart_radius: 30.0,
            heart_offset: [10.0, 5.0],
            myocardium_thickness: 8.0,
            angular_resolution: 200,
            torso_layers: 20,
            myocardium_layers: 4,
            blood_layers: 6,
            radial_grading: 4.0,
            lungs: Some(LungConfig {
                center_x: 62.0,
                center_y: 0.0,
                semi_axis_x: 16.0,
                semi_axis_y: 36.0,
            }),
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let finite = [
            self.torso_radius,
            self.heart_radius,
            self.heart_offset[0],
            self.heart_offset[1],
            self.myocardium_thickness,
            self.radial_grading,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("geometry parameters must be finite");
        }
        if self.heart_radius <= 0.0 || self.torso_radius <= 0.0 {
            return bad("radii must be positive");
        }
        let offset = self.heart_offset[0].hypot(self.heart_offset[1]);
        if offset + self.heart_radius >= self.torso_radius {
            return bad("heart must lie strictly inside the torso");
        }
        if self.myocardium_thickness <= 0.0 || self.myocardium_thickness >= self.heart_radius {
            return bad("myocardium thickness must be in (0, heart_radius)");
        }
        if self.angular_resolution < 8 {
            return bad("angular resolution must be at least 8");
        }
        if self.torso_layers < 2 {
            // one layer would put a triangle on both boundaries
            return bad("at least two torso layers are required");
        }
        if self.myocardium_layers < 1 || self.blood_layers < 1 {
            return bad("myocardium and blood need at least one layer each");
        }
        if self.radial_grading <= 0.0 {
            return bad("radial grading must be positive");
        }
        if let Some(l) = &self.lungs {
            if l.semi_axis_x <= 0.0 || l.semi_axis_y <= 0.0 || !l.center_x.is_finite() || !l.center_y.is_finite() {
                return bad("lung semi-axes must be positive");
            }
            if l.center_x <= l.semi_axis_x {
                return bad("left and right lungs overlap");
            }
            let c = self.heart_offset;
            for p in l.boundary_samples() {
                if p[0].hypot(p[1]) >= self.torso_radius {
                    return bad("lungs extend beyond the torso");
                }
                if (p[0] - c[0]).hypot(p[1] - c[1]) <= self.heart_radius {
                    return bad("lungs overlap the heart");
                }
            }
            if l.contains(c) {
                return bad("lungs overlap the heart");
            }
        }
        Ok(())
    }
}

/// Simulation mesh (with heart interior) and inverse-problem mesh (torso
/// annulus only) sharing the epicardial nodes bit-exactly.
#[derive(Clone, Debug)]
pub struct TorsoModel {
    pub full: Mesh,
    pub torso: Mesh,
    /// `torso_to_full[v]` is the full-mesh index of torso-mesh vertex `v`.
    pub torso_to_full: Vec<usize>,
    pub heart_center: Point,
}

pub fn generate_torso_2d(cfg: &GeometryConfig) -> Result<TorsoModel> {
    cfg.validate()?;
    let n = cfg.angular_resolution;
    let c = cfg.heart_offset;
    let dirs: Vec<Point> = (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let on_circle = |center: Point, r: f64, i: usize| [center[0] + r * dirs[i][0], center[1] + r * dirs[i][1]];

    // Torso rings, ring 0 on the epicardium, ring K on the torso surface.
    let k_layers = cfg.torso_layers;
    let q = cfg.radial_grading.powf(1.0 / (k_layers as f64 - 1.0));
    let mut cum = vec![0.0; k_layers + 1];
    for k in 0..k_layers {
        cum[k + 1] = cum[k] + q.powi(k as i32);
    }
    let total = cum[k_layers];
    let mut torso_vertices = Vec::with_capacity(n * (k_layers + 1));
    for (k, &ck) in cum.iter().enumerate() {
        let s = ck / total;
        for i in 0..n {
            let inner = on_circle(c, cfg.heart_radius, i);
            let outer = on_circle([0.0, 0.0], cfg.torso_radius, i);
            let p = if k == 0 {
                inner
            } else if k == k_layers {
                outer
            } else {
                [inner[0] + s * (outer[0] - inner[0]), inner[1] + s * (outer[1] - inner[1])]
            };
            torso_vertices.push(p);
        }
    }
    let mut torso_tris = Vec::with_capacity(2 * n * k_layers);
    ring_band(n, 0, n, k_layers, &mut torso_tris);
    let torso_regions: Vec<Region> = torso_tris
        .iter()
        .map(|tri: &[usize; 3]| {
            let p = centroid(&torso_vertices, tri);
            match &cfg.lungs {
                Some(l) if l.contains(p) => Region::Lungs,
                _ => Region::Torso,
            }
        })
        .collect();

    // Full mesh: centre node, blood rings, endocardium, myocardium rings,
    // then the torso rings exactly as above.
    let r_endo = cfg.heart_radius - cfg.myocardium_thickness;
    let mut radii = Vec::new();
    for m in 1..=cfg.blood_layers {
        radii.push(r_endo * m as f64 / cfg.blood_layers as f64);
    }
    for m in 1..cfg.myocardium_layers {
        radii.push(r_endo + cfg.myocardium_thickness * m as f64 / cfg.myocardium_layers as f64);
    }
    let heart_rings = radii.len();
    let mut full_vertices = vec![c];
    for &r in &radii {
        full_vertices.extend((0..n).map(|i| on_circle(c, r, i)));
    }
    let torso_offset = full_vertices.len();
    full_vertices.extend_from_slice(&torso_vertices);

    let mut full_tris = Vec::new();
    let mut full_regions = Vec::new();
    for i in 0..n {
        full_tris.push([0, 1 + i, 1 + (i + 1) % n]);
        full_regions.push(Region::Blood);
    }
    // Band b joins ring b and ring b + 1 (ring index counted from 0 = first ring
    // around the centre); the torso's ring 0 is ring `heart_rings`.
    for band in 0..heart_rings {
        let start = full_tris.len();
        ring_band(n, 1 + band * n, n, 1, &mut full_tris);
        let region = if band + 1 < cfg.blood_layers { Region::Blood } else { Region::Myocardium };
        full_regions.extend(std::iter::repeat_n(region, full_tris.len() - start));
    }
    full_tris.extend(torso_tris.iter().map(|t| t.map(|v| v + torso_offset)));
    full_regions.extend_from_slice(&torso_regions);

    let torso_to_full = (0..torso_vertices.len()).map(|v| v + torso_offset).collect();
    Ok(TorsoModel {
        full: Mesh::new(full_vertices, full_tris, full_regions)?,
        torso: Mesh::new(torso_vertices, torso_tris, torso_regions)?,
        torso_to_full,
        heart_center: c,
    })
}

/// Appends the two triangles of every quad between consecutive rings.
fn ring_band(n: usize, first: usize, stride: usize, layers: usize, out: &mut Vec<[usize; 3]>) {
    for k in 0..layers {
        for i in 0..n {
            let a = first + k * stride + i;
            let b = first + k * stride + (i + 1) % n;
            let d = first + (k + 1) * stride + i;
            let e = first + (k + 1) * stride + (i + 1) % n;
            out.push([a, e, b]);
            out.push([a, d, e]);
        }
    }
}

fn centroid(v: &[Point], tri: &[usize; 3]) -> Point {
    [
        (v[tri[0]][0] + v[tri[1]][0] + v[tri[2]][0]) / 3.0,
        (v[tri[0]][1] + v[tri[1]][1] + v[tri[2]][1]) / 3.0,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::extract_boundary_sets;

    fn minimal() -> GeometryConfig {
        GeometryConfig {
            angular_resolution: 8,
            torso_layers: 2,
            myocardium_layers: 1,
            blood_layers: 1,
            lungs: None,
            ..GeometryConfig::default()
        }
    }

    #[test]
    fn minimal_annulus_triangle_count() {
        let m = generate_torso_2d(&minimal()).unwrap();
        // enumerate: every quad of the 8 x 2 polar grid gives two triangles
        let mut quads = 0;
        for _layer in 0..2 {
            for _sector in 0..8 {
                quads += 1;
            }
        }
        assert_eq!(m.torso.n_triangles(), 2 * quads);
        assert_eq!(m.torso.n_triangles(), 8 * 2 * 2);
    }

    #[test]
    fn annulus_euler_characteristic_is_zero() {
        for cfg in [minimal(), GeometryConfig::default()] {
            let m = generate_torso_2d(&cfg).unwrap().torso;
            let v = m.n_vertices() as i64;
            let e = m.edge_counts().len() as i64;
            let f = m.n_triangles() as i64;
            assert_eq!(v - e + f, 0);
        }
    }

    #[test]
    fn lungs_produce_all_four_regions() {
        let m = generate_torso_2d(&GeometryConfig::default()).unwrap();
        for r in Region::ALL {
            assert!(m.full.regions().contains(&r), "missing {r}");
        }
        assert!(!m.torso.regions().contains(&Region::Blood));
        assert!(!m.torso.regions().contains(&Region::Myocardium));
    }

    #[test]
    fn edges_are_shared_by_one_or_two_triangles() {
        let model = generate_torso_2d(&GeometryConfig::default()).unwrap();
        for mesh in [&model.full, &model.torso] {
            let b: Vec<_> = mesh.edge_counts().into_iter().filter(|(_, c)| *c == 1).collect();
            assert!(mesh.edge_counts().values().all(|&c| c == 1 || c == 2));
            assert!(!b.is_empty());
        }
        // the full mesh is a disk: only torso-surface edges are boundary edges
        let nb = model.full.edge_counts().values().filter(|&&c| c == 1).count();
        assert_eq!(nb, GeometryConfig::default().angular_resolution);
    }

    #[test]
    fn all_triangles_positively_oriented() {
        let model = generate_torso_2d(&GeometryConfig::default()).unwrap();
        for mesh in [&model.full, &model.torso] {
            assert!((0..mesh.n_triangles()).all(|t| mesh.area(t) > 0.0));
        }
    }

    #[test]
    fn area_matches_analytic_annulus() {
        let cfg = GeometryConfig::default();
        let m = generate_torso_2d(&cfg).unwrap();
        let exact = PI * (cfg.torso_radius.powi(2) - cfg.heart_radius.powi(2));
        let rel = (m.torso.total_area() - exact).abs() / exact;
        assert!(rel < 0.02, "relative area gap {rel}");
        let coarse = generate_torso_2d(&GeometryConfig {
            angular_resolution: 16,
            ..cfg.clone()
        })
        .unwrap();
        let rel_coarse = (coarse.torso.total_area() - exact).abs() / exact;
        assert!(rel < rel_coarse);
    }

    #[test]
    fn epicardium_is_shared_bit_exactly() {
        let model = generate_torso_2d(&GeometryConfig::default()).unwrap();
        let b = extract_boundary_sets(&model.torso).unwrap();
        for &v in &b.gamma_h {
            assert_eq!(model.torso.vertices()[v], model.full.vertices()[model.torso_to_full[v]]);
        }
        assert_eq!(model.full.n_triangles(), model.torso.n_triangles() + {
            let cfg = GeometryConfig::default();
            cfg.angular_resolution * (1 + 2 * (cfg.blood_layers + cfg.myocardium_layers - 1))
        });
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let base = minimal();
        let cases = [
            GeometryConfig { myocardium_thickness: 0.0, ..base.clone() },
            GeometryConfig { heart_radius: 120.0, ..base.clone() },
            GeometryConfig { angular_resolution: 7, ..base.clone() },
            GeometryConfig { torso_layers: 1, ..base.clone() },
            GeometryConfig {
                lungs: Some(LungConfig { center_x: 20.0, center_y: 0.0, semi_axis_x: 15.0, semi_axis_y: 30.0 }),
                ..base.clone()
            },
        ];
        for cfg in cases {
            assert!(matches!(generate_torso_2d(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
