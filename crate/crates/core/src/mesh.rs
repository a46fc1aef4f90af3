//! Structured triangulations of the unit square with tagged boundary segments.
//!
//! The square is split into `n x n` cells and every cell is cut along the
//! diagonal from its bottom-left to its top-right corner. Boundary edges are
//! oriented counter-clockwise around the domain, so the outward normal of an
//! edge `a -> b` is the direction of `b - a` rotated by -90 degrees.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

/// A point in the plane.
pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least one subdivision per side")]
    NoSubdivisions,
    #[error("vertex permutation of length {got} does not match {expected} vertices")]
    BadPermutation { expected: usize, got: usize },
    #[error("boundary roles invalid: {0}")]
    InvalidRoles(&'static str),
}

/// One of the four sides of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentTag {
    /// Right side, `x = 1`.
    Gamma1,
    /// Bottom side, `y = 0`.
    Gamma2,
    /// Left side, `x = 0`.
    Gamma3,
    /// Top side, `y = 1`.
    Gamma4,
}

impl SegmentTag {
    pub const ALL: [SegmentTag; 4] = [Self::Gamma1, Self::Gamma2, Self::Gamma3, Self::Gamma4];

    pub fn index(self) -> u8 {
        match self {
            Self::Gamma1 => 1,
            Self::Gamma2 => 2,
            Self::Gamma3 => 3,
            Self::Gamma4 => 4,
        }
    }

    fn bit(self) -> u8 {
        1 << (self.index() - 1)
    }
}

impl fmt::Display for SegmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gamma{}", self.index())
    }
}

/// A small set of segment tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TagSet(u8);

impl TagSet {
    pub const EMPTY: TagSet = TagSet(0);
    pub const ALL: TagSet = TagSet(0b1111);

    pub fn of(tags: &[SegmentTag]) -> Self {
        TagSet(tags.iter().fold(0, |acc, t| acc | t.bit()))
    }

    pub fn contains(self, tag: SegmentTag) -> bool {
        self.0 & tag.bit() != 0
    }

    pub fn insert(&mut self, tag: SegmentTag) {
        self.0 |= tag.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersects(self, other: TagSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn complement(self) -> Self {
        TagSet(!self.0 & Self::ALL.0)
    }

    pub fn union(self, other: TagSet) -> Self {
        TagSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = SegmentTag> {
        SegmentTag::ALL.into_iter().filter(move |t| self.contains(*t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    /// Oriented counter-clockwise around the domain.
    pub vertices: [usize; 2],
    pub tag: SegmentTag,
}

/// Selects one of the four boundary condition roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    DirichletDisplacement,
    Traction,
    DirichletPressure,
    Flux,
}

/// Assignment of the boundary segments to essential and natural conditions
/// for the mechanics and the flow subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryRoles {
    pub dirichlet_displacement: TagSet,
    pub traction: TagSet,
    pub dirichlet_pressure: TagSet,
    pub flux: TagSet,
}

impl BoundaryRoles {
    /// Builds roles from the Dirichlet sets; the natural sets are their complements.
    pub fn new(dirichlet_displacement: TagSet, dirichlet_pressure: TagSet) -> Result<Self, MeshError> {
        if dirichlet_displacement.is_empty() {
            return Err(MeshError::InvalidRoles("displacement Dirichlet boundary is empty"));
        }
        if dirichlet_pressure.is_empty() {
            return Err(MeshError::InvalidRoles("pressure Dirichlet boundary is empty"));
        }
        Ok(Self {
            dirichlet_displacement,
            traction: dirichlet_displacement.complement(),
            dirichlet_pressure,
            flux: dirichlet_pressure.complement(),
        })
    }

    /// Essential conditions on the whole boundary for both fields.
    pub fn all_dirichlet() -> Self {
        Self::new(TagSet::ALL, TagSet::ALL).expect("full boundary is a valid Dirichlet set")
    }

    pub fn tags(&self, role: Role) -> TagSet {
        match role {
            Role::DirichletDisplacement => self.dirichlet_displacement,
            Role::Traction => self.traction,
            Role::DirichletPressure => self.dirichlet_pressure,
            Role::Flux => self.flux,
        }
    }
}

/// A conforming triangulation of the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Subdivisions per side.
    pub n: usize,
}

impl Mesh {
    /// Mesh size `h = 1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn signed_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.triangles[cell].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn triangle_points(&self, cell: usize) -> [Point; 3] {
        self.triangles[cell].map(|v| self.vertices[v])
    }

    /// Unique undirected edges, each as a sorted vertex pair, in first-seen order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut seen = HashMap::new();
        let mut edges = Vec::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                seen.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
            }
        }
        edges
    }

    /// Returns the same triangulation with vertex `i` renamed to `perm[i]`.
    pub fn relabel_vertices(&self, perm: &[usize]) -> Result<Mesh, MeshError> {
        if perm.len() != self.vertices.len() {
            return Err(MeshError::BadPermutation { expected: self.vertices.len(), got: perm.len() });
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(MeshError::BadPermutation { expected: self.vertices.len(), got: perm.len() });
            }
        }
        let mut vertices = vec![[0.0; 2]; self.vertices.len()];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        Ok(Mesh {
            vertices,
            triangles: self.triangles.iter().map(|t| t.map(|v| perm[v])).collect(),
            boundary_edges: self
                .boundary_edges
                .iter()
                .map(|e| BoundaryEdge { vertices: e.vertices.map(|v| perm[v]), tag: e.tag })
                .collect(),
            n: self.n,
        })
    }

    /// Plain-text dump: `x y` per vertex, `i j k` per triangle, `i j tag` per
    /// boundary edge, in that order.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "{} {}", v[0], v[1])?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        for e in &self.boundary_edges {
            writeln!(out, "{} {} {}", e.vertices[0], e.vertices[1], e.tag.index())?;
        }
        Ok(())
    }
}

/// Uniform `n x n` triangulation of `[0,1]^2`.
pub fn unit_square_mesh(n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::NoSubdivisions);
    }
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // exact endpoints so boundary nodes sit exactly on the sides
            let x = if i == n { 1.0 } else { i as f64 * h };
            let y = if j == n { 1.0 } else { j as f64 * h };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (sw, se, nw, ne) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    let mut boundary_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary_edges.push(BoundaryEdge { vertices: [id(i, 0), id(i + 1, 0)], tag: SegmentTag::Gamma2 });
    }
    for j in 0..n {
        boundary_edges.push(BoundaryEdge { vertices: [id(n, j), id(n, j + 1)], tag: SegmentTag::Gamma1 });
    }
    for i in (0..n).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [id(i + 1, n), id(i, n)], tag: SegmentTag::Gamma4 });
    }
    for j in (0..n).rev() {
        boundary_edges.push(BoundaryEdge { vertices: [id(0, j + 1), id(0, j)], tag: SegmentTag::Gamma3 });
    }
    Ok(Mesh { vertices, triangles, boundary_edges, n })
}

/// Boundary edges whose tag belongs to the selected role.
pub fn boundary_edges_with_role<'m>(mesh: &'m Mesh, roles: &BoundaryRoles, which: Role) -> Vec<&'m BoundaryEdge> {
    let tags = roles.tags(which);
    mesh.boundary_edges.iter().filter(|e| tags.contains(e.tag)).collect()
}

/// Unit outward normal of a boundary edge.
pub fn outward_normal(mesh: &Mesh, edge: &BoundaryEdge) -> Point {
    let [a, b] = edge.vertices.map(|v| mesh.vertices[v]);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    [dy / len, -dx / len]
}
