//! `ecgi-mesh v1` text format.
//!
//! ```text
//! ecgi-mesh v1
//! vertices <n>
//! <index> <x> <y>
//! triangles <m>
//! <index> <v0> <v1> <v2> <region>
//! gamma <k>
//! <node>
//! gammaH <k>
//! <node>
//! electrodes <k> <placement> <seed>
//! <node>
//! ```
//!
//! Floats use Rust's shortest round-trip representation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{BoundarySets, ElectrodeSet, Mesh, Placement, Region};
use crate::error::{Error, Result};

const HEADER: &str = "ecgi-mesh v1";

pub fn write_mesh(mesh: &Mesh, bounds: &BoundarySets, electrodes: &ElectrodeSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "vertices {}", mesh.n_vertices());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(out, "{i} {:?} {:?}", p[0], p[1]);
    }
    let _ = writeln!(out, "triangles {}", mesh.n_triangles());
    for (t, (tri, r)) in mesh.triangles().iter().zip(mesh.regions()).enumerate() {
        let _ = writeln!(out, "{t} {} {} {} {r}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "gamma {}", bounds.gamma.len());
    for v in &bounds.gamma {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(out, "gammaH {}", bounds.gamma_h.len());
    for v in &bounds.gamma_h {
        let _ = writeln!(out, "{v}");
    }
    let _ = writeln!(
        out,
        "electrodes {} {} {}",
        electrodes.len(),
        electrodes.placement.as_str(),
        electrodes.seed
    );
    for v in &electrodes.nodes {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn save_mesh(
    mesh: &Mesh,
    bounds: &BoundarySets,
    electrodes: &ElectrodeSet,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_mesh(mesh, bounds, electrodes)).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<(Mesh, BoundarySets, ElectrodeSet)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_mesh(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.split_whitespace().collect()))
            }
            None => Err(Error::Parse {
                line: self.last + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }

    fn section(&mut self, name: &str, extra: usize) -> Result<(usize, Vec<&'a str>)> {
        let (line, tok) = self.next_line(name)?;
        if tok.len() != 2 + extra || tok[0] != name {
            return Err(Error::Parse {
                line,
                message: format!("expected `{name} <count>` section header"),
            });
        }
        let count = parse::<usize>(tok[1], line)?;
        Ok((count, tok))
    }
}

fn parse<T: FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{tok}`"),
    })
}

fn node_list(lines: &mut Lines<'_>, count: usize, n_vertices: usize, what: &str) -> Result<Vec<usize>> {
    (0..count)
        .map(|_| {
            let (line, tok) = lines.next_line(what)?;
            if tok.len() != 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected a single node index in `{what}`"),
                });
            }
            let v = parse::<usize>(tok[0], line)?;
            if v >= n_vertices {
                return Err(Error::Parse {
                    line,
                    message: format!("node {v} does not exist ({n_vertices} vertices)"),
                });
            }
            Ok(v)
        })
        .collect()
}

pub fn read_mesh(text: &str) -> Result<(Mesh, BoundarySets, ElectrodeSet)> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (line, tok) = lines.next_line("header")?;
    if tok.join(" ") != HEADER {
        return Err(Error::Parse {
            line,
            message: format!("missing `{HEADER}` header"),
        });
    }

    let (nv, _) = lines.section("vertices", 0)?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (line, tok) = lines.next_line("vertex")?;
        if tok.len() != 3 || parse::<usize>(tok[0], line)? != i {
            return Err(Error::Parse {
                line,
                message: format!("expected `{i} <x> <y>`"),
            });
        }
        let p = [parse::<f64>(tok[1], line)?, parse::<f64>(tok[2], line)?];
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite coordinate".into(),
            });
        }
        vertices.push(p);
    }

    let (nt, _) = lines.section("triangles", 0)?;
    let mut triangles = Vec::with_capacity(nt);
    let mut regions = Vec::with_capacity(nt);
    for t in 0..nt {
        let (line, tok) = lines.next_line("triangle")?;
        if tok.len() != 5 || parse::<usize>(tok[0], line)? != t {
            return Err(Error::Parse {
                line,
                message: format!("expected `{t} <v0> <v1> <v2> <region>`"),
            });
        }
        let mut tri = [0usize; 3];
        for k in 0..3 {
            tri[k] = parse(tok[1 + k], line)?;
            if tri[k] >= nv {
                return Err(Error::Parse {
                    line,
                    message: format!("triangle {t} references vertex {} but only {nv} exist", tri[k]),
                });
            }
        }
        let region = Region::from_str(tok[4]).map_err(|message| Error::Parse { line, message })?;
        triangles.push(tri);
        regions.push(region);
    }

    let (ng, _) = lines.section("gamma", 0)?;
    let gamma = node_list(&mut lines, ng, nv, "gamma")?;
    let (ngh, _) = lines.section("gammaH", 0)?;
    let gamma_h = node_list(&mut lines, ngh, nv, "gammaH")?;
    let (ne, tok) = lines.section("electrodes", 2)?;
    let eline = lines.last;
    let placement = Placement::from_str(tok[2]).map_err(|message| Error::Parse { line: eline, message })?;
    let seed = parse::<u64>(tok[3], eline)?;
    let nodes = node_list(&mut lines, ne, nv, "electrodes")?;
    for (line, rest) in lines.inner.by_ref() {
        if !rest.trim().is_empty() {
            return Err(Error::Parse {
                line: line + 1,
                message: "trailing content after the electrodes section".into(),
            });
        }
    }

    let mesh = Mesh::new(vertices, triangles, regions)?;
    let bounds = BoundarySets::from_loops(&mesh, gamma, gamma_h)?;
    Ok((
        mesh,
        bounds,
        ElectrodeSet {
            nodes,
            placement,
            seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{extract_boundary_sets, generate_torso_2d, place_electrodes, GeometryConfig};

    fn sample() -> (Mesh, BoundarySets, ElectrodeSet) {
        let model = generate_torso_2d(&GeometryConfig {
            angular_resolution: 12,
            torso_layers: 3,
            ..GeometryConfig::default()
        })
        .unwrap();
        let b = extract_boundary_sets(&model.torso).unwrap();
        let e = place_electrodes(&model.torso, &b, 5, Placement::Random, 9).unwrap();
        (model.torso, b, e)
    }

    #[test]
    fn round_trip_is_structurally_equal() {
        let (m, b, e) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("torso.mesh");
        save_mesh(&m, &b, &e, &path).unwrap();
        let (m2, b2, e2) = load_mesh(&path).unwrap();
        assert_eq!(m, m2);
        assert_eq!(b, b2);
        assert_eq!(e, e2);
    }

    #[test]
    fn dangling_vertex_reference_reports_line() {
        let (m, b, e) = sample();
        let text = write_mesh(&m, &b, &e);
        let nv = m.n_vertices();
        // first triangle line sits right after the vertex block
        let line_no = 1 + 1 + nv + 1 + 1;
        let broken: Vec<String> = text
            .lines()
            .enumerate()
            .map(|(i, l)| if i + 1 == line_no { format!("0 0 1 {} torso", nv + 5) } else { l.to_string() })
            .collect();
        match read_mesh(&broken.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, line_no),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(read_mesh(""), Err(Error::Parse { line: 1, .. })));
    }
}
