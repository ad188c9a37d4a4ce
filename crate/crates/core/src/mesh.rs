//! Two-dimensional simplicial meshes with the oriented edge data needed by
//! the Morley and Crouzeix-Raviart elements.
//!
//! Local numbering convention used throughout the crate: local edge `i` of a
//! cell is the edge opposite local vertex `i`, i.e. it joins local vertices
//! `(i + 1) % 3` and `(i + 2) % 3`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("uniform mesh needs at least one subdivision")]
    ZeroResolution,
    #[error("cell {cell} references vertex {vertex}, but the mesh has {n_vertices} vertices")]
    VertexOutOfRange {
        cell: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("cell {cell} repeats a vertex")]
    DegenerateCell { cell: usize },
    #[error("cells {first} and {second} are duplicates")]
    DuplicateCell { first: usize, second: usize },
    #[error("edge ({0}, {1}) is shared by three or more cells")]
    NonManifoldEdge(usize, usize),
    #[error("cell {cell} has non-positive signed area {area:e}")]
    InvertedCell { cell: usize, area: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An immutable triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    /// Vertex pairs sorted ascending; edges are numbered lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Global edge index of local edge `i` (opposite local vertex `i`).
    pub cell_edges: Vec<[usize; 3]>,
    /// `n_F . n_K` for each local edge: `+1` if the global normal points out
    /// of the cell, `-1` otherwise.
    pub cell_edge_signs: Vec<[f64; 3]>,
    /// First entry is always present; the second is `None` on the boundary.
    pub edge_cells: Vec<(usize, Option<usize>)>,
    pub boundary_edge: Vec<bool>,
    pub boundary_vertex: Vec<bool>,
    pub cell_area: Vec<f64>,
    pub cell_diameter: Vec<f64>,
    pub edge_length: Vec<f64>,
    pub edge_normal: Vec<Point>,
    pub edge_tangent: Vec<Point>,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Uniform triangulation of the unit square with `n x n` squares, each
    /// split along its bottom-left to top-right diagonal.
    pub fn uniform_unit_square(n: usize) -> Result<Self, MeshError> {
        if n == 0 {
            return Err(MeshError::ZeroResolution);
        }
        let np = n + 1;
        let mut vertices = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut cells = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * np + i;
                let b = a + 1;
                let c = a + np + 1;
                let d = a + np;
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            }
        }
        Self::build_connectivity(vertices, cells)
    }

    /// Derive edges, orientations and geometric data from raw vertices and
    /// cells. Clockwise cells are rejected rather than reordered.
    pub fn build_connectivity(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut seen_cells: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        let mut cell_area = Vec::with_capacity(cells.len());
        let mut cell_diameter = Vec::with_capacity(cells.len());
        for (k, cell) in cells.iter().enumerate() {
            for &v in cell {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange {
                        cell: k,
                        vertex: v,
                        n_vertices: nv,
                    });
                }
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(MeshError::DegenerateCell { cell: k });
            }
            let mut key = *cell;
            key.sort_unstable();
            if let Some(&first) = seen_cells.get(&key) {
                return Err(MeshError::DuplicateCell { first, second: k });
            }
            seen_cells.insert(key, k);

            let [a, b, c] = cell.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(MeshError::InvertedCell { cell: k, area });
            }
            cell_area.push(area);
            cell_diameter.push(norm(sub(a, b)).max(norm(sub(b, c))).max(norm(sub(c, a))));
        }

        // Edge -> incident (cell, local edge) pairs, ordered by sorted vertex pair.
        let mut incidence: BTreeMap<[usize; 2], Vec<(usize, usize)>> = BTreeMap::new();
        for (k, cell) in cells.iter().enumerate() {
            for i in 0..3 {
                let p = cell[(i + 1) % 3];
                let q = cell[(i + 2) % 3];
                let key = if p < q { [p, q] } else { [q, p] };
                incidence.entry(key).or_default().push((k, i));
            }
        }

        let ne = incidence.len();
        let mut edges = Vec::with_capacity(ne);
        let mut edge_cells = Vec::with_capacity(ne);
        let mut boundary_edge = Vec::with_capacity(ne);
        let mut edge_length = Vec::with_capacity(ne);
        let mut edge_normal = Vec::with_capacity(ne);
        let mut edge_tangent = Vec::with_capacity(ne);
        let mut cell_edges = vec![[usize::MAX; 3]; cells.len()];
        let mut cell_edge_signs = vec![[0.0; 3]; cells.len()];
        let mut boundary_vertex = vec![false; nv];

        for (e, (key, inc)) in incidence.into_iter().enumerate() {
            if inc.len() > 2 {
                return Err(MeshError::NonManifoldEdge(key[0], key[1]));
            }
            let d = sub(vertices[key[1]], vertices[key[0]]);
            let len = norm(d);
            let tau = [d[0] / len, d[1] / len];
            // Rotate the lower-to-higher unit vector by +90 degrees.
            let mut normal = [-tau[1], tau[0]];
            let (k0, i0) = inc[0];
            let on_boundary = inc.len() == 1;
            if on_boundary {
                let opposite = vertices[cells[k0][i0]];
                let to_opp = sub(opposite, vertices[key[0]]);
                if normal[0] * to_opp[0] + normal[1] * to_opp[1] > 0.0 {
                    normal = [-normal[0], -normal[1]];
                }
                boundary_vertex[key[0]] = true;
                boundary_vertex[key[1]] = true;
            }
            for &(k, i) in &inc {
                let opposite = vertices[cells[k][i]];
                let to_opp = sub(opposite, vertices[key[0]]);
                let inward = normal[0] * to_opp[0] + normal[1] * to_opp[1] > 0.0;
                cell_edges[k][i] = e;
                cell_edge_signs[k][i] = if inward { -1.0 } else { 1.0 };
            }
            edges.push(key);
            edge_cells.push((k0, inc.get(1).map(|&(k, _)| k)));
            boundary_edge.push(on_boundary);
            edge_length.push(len);
            edge_normal.push(normal);
            edge_tangent.push([-normal[1], normal[0]]);
        }

        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            cell_edge_signs,
            edge_cells,
            boundary_edge,
            boundary_vertex,
            cell_area,
            cell_diameter,
            edge_length,
            edge_normal,
            edge_tangent,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Mesh size `h = max_K diam(K)`.
    pub fn h(&self) -> f64 {
        self.cell_diameter.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_points(&self, k: usize) -> [Point; 3] {
        self.cells[k].map(|v| self.vertices[v])
    }

    pub fn cell_centroid(&self, k: usize) -> Point {
        let [a, b, c] = self.cell_points(k);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e].map(|v| self.vertices[v]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Outward unit normal of cell `k` on its local edge `i`.
    pub fn outward_normal(&self, k: usize, i: usize) -> Point {
        let e = self.cell_edges[k][i];
        let s = self.cell_edge_signs[k][i];
        let n = self.edge_normal[e];
        [s * n[0], s * n[1]]
    }

    pub fn inradius(&self, k: usize) -> f64 {
        let perimeter: f64 = self.cell_edges[k]
            .iter()
            .map(|&e| self.edge_length[e])
            .sum();
        2.0 * self.cell_area[k] / perimeter
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| !self.boundary_edge[e])
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| self.boundary_edge[e])
    }

    /// Local index of global edge `e` in cell `k`.
    pub fn local_edge(&self, k: usize, e: usize) -> Option<usize> {
        self.cell_edges[k].iter().position(|&x| x == e)
    }

    /// Flip the orientation sign of one local edge. Only useful for fault
    /// injection: it breaks the agreement between the two cells sharing the
    /// edge on the direction of the normal derivative degree of freedom.
    pub fn debug_flip_edge_sign(&mut self, k: usize, i: usize) {
        self.cell_edge_signs[k][i] = -self.cell_edge_signs[k][i];
    }

    /// Parse the line-oriented `v x y` / `c i j k` format.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| MeshError::Parse {
                line: lineno + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            match tag {
                "v" => {
                    if rest.len() != 2 {
                        return Err(parse_err(format!(
                            "expected 2 coordinates, got {}",
                            rest.len()
                        )));
                    }
                    let mut p = [0.0; 2];
                    for (slot, s) in p.iter_mut().zip(&rest) {
                        *slot = s.parse().map_err(|e| parse_err(format!("{s:?}: {e}")))?;
                    }
                    vertices.push(p);
                }
                "c" => {
                    if rest.len() != 3 {
                        return Err(parse_err(format!("expected 3 indices, got {}", rest.len())));
                    }
                    let mut c = [0usize; 3];
                    for (slot, s) in c.iter_mut().zip(&rest) {
                        *slot = s.parse().map_err(|e| parse_err(format!("{s:?}: {e}")))?;
                    }
                    cells.push(c);
                }
                other => return Err(parse_err(format!("unknown record {other:?}"))),
            }
        }
        Self::build_connectivity(vertices, cells)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(file))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {}", v[0], v[1]);
        }
        for c in &self.cells {
            let _ = writeln!(out, "c {} {} {}", c[0], c[1], c[2]);
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: Point, b: Point) -> f64 {
        a[0] * b[0] + a[1] * b[1]
    }

    fn check_invariants(mesh: &Mesh) {
        for e in 0..mesh.n_edges() {
            let n = mesh.edge_normal[e];
            let t = mesh.edge_tangent[e];
            assert!((norm(n) - 1.0).abs() < 1e-14);
            assert!(dot(n, t).abs() < 1e-14);
            match mesh.edge_cells[e] {
                (k, None) => {
                    assert!(mesh.boundary_edge[e]);
                    let i = mesh.local_edge(k, e).unwrap();
                    assert_eq!(mesh.cell_edge_signs[k][i], 1.0);
                }
                (k0, Some(k1)) => {
                    assert!(!mesh.boundary_edge[e]);
                    let s0 = mesh.cell_edge_signs[k0][mesh.local_edge(k0, e).unwrap()];
                    let s1 = mesh.cell_edge_signs[k1][mesh.local_edge(k1, e).unwrap()];
                    assert_eq!(s0 * s1, -1.0);
                }
            }
        }
        // Outward normals really point away from the opposite vertex.
        for k in 0..mesh.n_cells() {
            for i in 0..3 {
                let n = mesh.outward_normal(k, i);
                let e = mesh.cell_edges[k][i];
                let to_opp = sub(
                    mesh.vertices[mesh.cells[k][i]],
                    mesh.vertices[mesh.edges[e][0]],
                );
                assert!(dot(n, to_opp) < 0.0);
            }
            assert!(mesh.cell_area[k] > 0.0);
        }
    }

    #[test]
    fn rejects_zero_resolution() {
        assert!(matches!(
            Mesh::uniform_unit_square(0),
            Err(MeshError::ZeroResolution)
        ));
    }

    #[test]
    fn small_uniform_counts() {
        let m1 = Mesh::uniform_unit_square(1).unwrap();
        assert_eq!((m1.n_vertices(), m1.n_cells(), m1.n_edges()), (4, 2, 5));
        let m2 = Mesh::uniform_unit_square(2).unwrap();
        assert_eq!((m2.n_vertices(), m2.n_cells(), m2.n_edges()), (9, 8, 16));
        check_invariants(&m1);
        check_invariants(&m2);
    }

    #[test]
    fn euler_relation_area_and_mesh_size() {
        for n in [1, 2, 3, 5, 8] {
            let m = Mesh::uniform_unit_square(n).unwrap();
            let euler = m.n_vertices() as i64 - m.n_edges() as i64 + m.n_cells() as i64;
            assert_eq!(euler, 1);
            assert_eq!(m.n_edges(), 3 * n * n + 2 * n);
            let total: f64 = m.cell_area.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((m.h() - 2f64.sqrt() / n as f64).abs() < 1e-14);
            check_invariants(&m);
        }
    }

    #[test]
    fn shape_regularity_is_refinement_invariant() {
        let ratio = |n| {
            let m = Mesh::uniform_unit_square(n).unwrap();
            (0..m.n_cells())
                .map(|k| m.cell_diameter[k] / m.inradius(k))
                .fold(0.0, f64::max)
        };
        let r = ratio(2);
        for n in [4, 8, 16] {
            assert!((ratio(n) - r).abs() < 1e-10);
        }
    }

    #[test]
    fn single_triangle_outward_normals() {
        let m = Mesh::build_connectivity(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]])
            .unwrap();
        assert!(m.boundary_edge.iter().all(|&b| b));
        let s = 0.5f64.sqrt();
        let expect = |a: usize, b: usize| m.edges.iter().position(|&e| e == [a, b]).unwrap();
        let close = |p: Point, q: Point| (p[0] - q[0]).abs() < 1e-15 && (p[1] - q[1]).abs() < 1e-15;
        assert!(close(m.edge_normal[expect(0, 1)], [0.0, -1.0]));
        assert!(close(m.edge_normal[expect(1, 2)], [s, s]));
        assert!(close(m.edge_normal[expect(0, 2)], [-1.0, 0.0]));
    }

    #[test]
    fn shared_edge_seen_with_opposite_signs() {
        let m = Mesh::uniform_unit_square(1).unwrap();
        let diag = m.edges.iter().position(|&e| e == [0, 3]).unwrap();
        assert!(!m.boundary_edge[diag]);
        let (k0, k1) = m.edge_cells[diag];
        let k1 = k1.unwrap();
        let n0 = m.outward_normal(k0, m.local_edge(k0, diag).unwrap());
        let n1 = m.outward_normal(k1, m.local_edge(k1, diag).unwrap());
        assert!((n0[0] + n1[0]).abs() < 1e-15 && (n0[1] + n1[1]).abs() < 1e-15);
    }

    #[test]
    fn rejects_inverted_and_non_manifold() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -1.0]];
        let err = Mesh::build_connectivity(v.clone(), vec![[0, 2, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::InvertedCell { cell: 0, .. }));
        // Three cells on edge (0, 1).
        let v2 = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, -1.0], [0.3, 0.8]];
        let err = Mesh::build_connectivity(v2, vec![[0, 1, 2], [0, 3, 1], [0, 1, 4]]).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge(0, 1)));
        let err = Mesh::build_connectivity(v, vec![[0, 1, 2], [1, 2, 0]]).unwrap_err();
        assert!(matches!(err, MeshError::DuplicateCell { .. }));
    }

    #[test]
    fn text_round_trip() {
        let m = Mesh::uniform_unit_square(3).unwrap();
        let back = Mesh::read_text(m.to_text().as_bytes()).unwrap();
        assert_eq!(m, back);
        let again = Mesh::build_connectivity(m.vertices.clone(), m.cells.clone()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Mesh::read_text("v 0 0\nv 1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 2, .. }));
        let err = Mesh::read_text("q 1 2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 1, .. }));
    }
}
