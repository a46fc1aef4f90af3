//! Continuous Lagrange spaces on a [`Mesh`] and Dirichlet bookkeeping.
//!
//! Global nodes are numbered vertices first, then edge nodes (edge by edge in
//! [`Mesh::edges`] order, each run ordered from the smaller vertex index),
//! then cell-interior nodes. Vector spaces interleave components per node,
//! so DOF `2 * node + c` carries component `c`.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::elements::{ElementError, LagrangeBasis};
use crate::mesh::{BoundaryRoles, Mesh, Point, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("spaces have 1 or 2 components, got {0}")]
    Components(usize),
    #[error("boundary edge {0:?} is not an edge of any triangle")]
    OrphanBoundaryEdge([usize; 2]),
}

/// A boundary edge seen from its adjacent cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    /// Index into `mesh.boundary_edges`.
    pub edge: usize,
    pub cell: usize,
    /// Local edge `e` runs from local vertex `e` to `(e + 1) % 3`.
    pub local_edge: usize,
}

/// Scalar or vector continuous `P_degree` space.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Arc<Mesh>,
    basis: LagrangeBasis,
    components: usize,
    node_coords: Vec<Point>,
    cell_nodes: Vec<usize>,
    boundary_faces: Vec<BoundaryFace>,
}

pub fn build_space(mesh: Arc<Mesh>, degree: usize, components: usize) -> Result<FemSpace, SpaceError> {
    if !(1..=2).contains(&components) {
        return Err(SpaceError::Components(components));
    }
    let basis = LagrangeBasis::new(degree)?;
    let per_edge = degree - 1;
    let nv = mesh.vertices.len();
    let edges = mesh.edges();
    let edge_id: HashMap<[usize; 2], usize> = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let interior_base = nv + edges.len() * per_edge;
    let per_cell_interior = usize::from(degree == 3);

    let mut node_coords = mesh.vertices.clone();
    node_coords.resize(interior_base + per_cell_interior * mesh.triangles.len(), [0.0; 2]);
    for (i, &[a, b]) in edges.iter().enumerate() {
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        for s in 0..per_edge {
            let t = (s + 1) as f64 / degree as f64;
            node_coords[nv + i * per_edge + s] = [(1.0 - t) * pa[0] + t * pb[0], (1.0 - t) * pa[1] + t * pb[1]];
        }
    }

    let nc = basis.node_count();
    let mut cell_nodes = Vec::with_capacity(nc * mesh.triangles.len());
    for (cell, tri) in mesh.triangles.iter().enumerate() {
        cell_nodes.extend_from_slice(tri);
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let base = nv + edge_id[&[a.min(b), a.max(b)]] * per_edge;
            for s in 0..per_edge {
                cell_nodes.push(if a < b { base + s } else { base + per_edge - 1 - s });
            }
        }
        if per_cell_interior == 1 {
            let node = interior_base + cell;
            let [p0, p1, p2] = mesh.triangle_points(cell);
            node_coords[node] = [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0];
            cell_nodes.push(node);
        }
    }

    let mut directed = HashMap::with_capacity(3 * mesh.triangles.len());
    for (cell, tri) in mesh.triangles.iter().enumerate() {
        for e in 0..3 {
            directed.insert([tri[e], tri[(e + 1) % 3]], (cell, e));
        }
    }
    let boundary_faces = mesh
        .boundary_edges
        .iter()
        .enumerate()
        .map(|(i, be)| {
            directed
                .get(&be.vertices)
                .map(|&(cell, local_edge)| BoundaryFace { edge: i, cell, local_edge })
                .ok_or(SpaceError::OrphanBoundaryEdge(be.vertices))
        })
        .collect::<Result<_, _>>()?;

    Ok(FemSpace { mesh, basis, components, node_coords, cell_nodes, boundary_faces })
}

impl FemSpace {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn node_count(&self) -> usize {
        self.node_coords.len()
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    pub fn total_dofs(&self) -> usize {
        self.components * self.node_coords.len()
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.basis.node_count()
    }

    /// Global node indices of `cell`, in local basis order.
    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        let nc = self.basis.node_count();
        &self.cell_nodes[cell * nc..(cell + 1) * nc]
    }

    pub fn dof(&self, node: usize, component: usize) -> usize {
        self.components * node + component
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    /// Global nodes on a boundary face, ordered along the edge direction.
    pub fn face_nodes(&self, face: &BoundaryFace) -> Vec<usize> {
        let nodes = self.cell_nodes(face.cell);
        self.basis.edge_nodes(face.local_edge).into_iter().map(|l| nodes[l]).collect()
    }
}

/// A value a field can take at a point: a scalar or a 2-vector.
pub trait FieldValue: Copy {
    const COMPONENTS: usize;
    fn component(&self, c: usize) -> f64;
}

impl FieldValue for f64 {
    const COMPONENTS: usize = 1;
    fn component(&self, _: usize) -> f64 {
        *self
    }
}

impl FieldValue for [f64; 2] {
    const COMPONENTS: usize = 2;
    fn component(&self, c: usize) -> f64 {
        self[c]
    }
}

/// Nodal interpolant of `field`.
pub fn interpolate<V: FieldValue>(space: &FemSpace, field: impl Fn(Point) -> V) -> Vec<f64> {
    assert_eq!(V::COMPONENTS, space.components, "field and space component counts differ");
    let mut out = vec![0.0; space.total_dofs()];
    for (node, &p) in space.node_coords.iter().enumerate() {
        let v = field(p);
        for c in 0..space.components {
            out[space.dof(node, c)] = v.component(c);
        }
    }
    out
}

/// Constrained DOFs of one space.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DirichletSet {
    dofs: Vec<usize>,
}

impl DirichletSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_dofs(mut dofs: Vec<usize>) -> Self {
        dofs.sort_unstable();
        dofs.dedup();
        Self { dofs }
    }

    /// Sorted, unique.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn contains(&self, dof: usize) -> bool {
        self.dofs.binary_search(&dof).is_ok()
    }

    /// Boundary values sampled at the constrained DOFs, in [`Self::dofs`] order.
    pub fn sample<V: FieldValue>(&self, space: &FemSpace, field: impl Fn(Point) -> V) -> Vec<f64> {
        assert_eq!(V::COMPONENTS, space.components, "field and space component counts differ");
        self.dofs
            .iter()
            .map(|&d| field(space.node_coords[d / space.components]).component(d % space.components))
            .collect()
    }

    /// The same constraints shifted into a larger, block-ordered system.
    pub fn offset(&self, by: usize) -> DirichletSet {
        DirichletSet { dofs: self.dofs.iter().map(|d| d + by).collect() }
    }
}

/// Every DOF whose node lies on a boundary edge tagged for `which`.
///
/// A corner shared by a Dirichlet edge and a natural edge is constrained.
pub fn dirichlet_dofs(space: &FemSpace, roles: &BoundaryRoles, which: Role) -> DirichletSet {
    let tags = roles.tags(which);
    let mut dofs = Vec::new();
    for face in &space.boundary_faces {
        if tags.contains(space.mesh.boundary_edges[face.edge].tag) {
            for node in space.face_nodes(face) {
                dofs.extend((0..space.components).map(|c| space.dof(node, c)));
            }
        }
    }
    DirichletSet::from_dofs(dofs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_mesh, SegmentTag, TagSet};
    use rand::{Rng, SeedableRng};

    fn space(n: usize, degree: usize, components: usize) -> FemSpace {
        build_space(Arc::new(unit_square_mesh(n).unwrap()), degree, components).unwrap()
    }

    #[test]
    fn dof_counts() {
        assert_eq!(space(1, 1, 1).total_dofs(), 4);
        assert_eq!(space(16, 3, 2).total_dofs(), 4802);
        assert_eq!(space(64, 2, 1).total_dofs(), 16641);
        for n in [1, 2, 4, 8, 16] {
            for k in 1..=3 {
                for c in 1..=2 {
                    assert_eq!(space(n, k, c).total_dofs(), c * (k * n + 1).pow(2));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mesh = Arc::new(unit_square_mesh(1).unwrap());
        assert!(matches!(build_space(mesh.clone(), 4, 1), Err(SpaceError::Element(_))));
        assert_eq!(build_space(mesh, 1, 3).unwrap_err(), SpaceError::Components(3));
    }

    #[test]
    fn shared_nodes_have_matching_coordinates() {
        // every local node must map to a global node at the same physical point
        for k in 1..=3 {
            let s = space(3, k, 1);
            for cell in 0..s.mesh().triangles.len() {
                let [p0, p1, p2] = s.mesh().triangle_points(cell);
                for (l, r) in s.basis().nodes().iter().enumerate() {
                    let x = [
                        p0[0] + (p1[0] - p0[0]) * r[0] + (p2[0] - p0[0]) * r[1],
                        p0[1] + (p1[1] - p0[1]) * r[0] + (p2[1] - p0[1]) * r[1],
                    ];
                    let g = s.node_coords()[s.cell_nodes(cell)[l]];
                    assert!((g[0] - x[0]).abs() < 1e-14 && (g[1] - x[1]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn dirichlet_counts() {
        let s = space(2, 1, 1);
        let all = dirichlet_dofs(&s, &BoundaryRoles::all_dirichlet(), Role::DirichletPressure);
        assert_eq!(all.len(), 8);
        let gp = TagSet::of(&[SegmentTag::Gamma2, SegmentTag::Gamma4]);
        let roles = BoundaryRoles::new(gp, gp).unwrap();
        let d = dirichlet_dofs(&s, &roles, Role::DirichletPressure);
        assert_eq!(d.len(), 6);
        for &dof in d.dofs() {
            let y = s.node_coords()[dof][1];
            assert!(y == 0.0 || y == 1.0);
        }
        for k in 1..=3 {
            let s = space(4, k, 2);
            let d = dirichlet_dofs(&s, &roles, Role::DirichletDisplacement);
            for &dof in d.dofs() {
                let [x, y] = s.node_coords()[dof / 2];
                assert!(!(0.0 < x && x < 1.0 && 0.0 < y && y < 1.0));
            }
            assert_eq!(d.len(), 2 * 2 * (4 * k + 1));
        }
    }

    #[test]
    fn interpolation() {
        let s = space(2, 1, 1);
        assert!(interpolate(&s, |_| 1.0).iter().all(|&v| v == 1.0));
        let c = interpolate(&s, |p| p[0] + p[1]);
        let mid = s.node_coords().iter().position(|p| *p == [0.5, 0.5]).unwrap();
        assert_eq!(c[mid], 1.0);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for k in 1..=3usize {
            let s = space(3, k, 2);
            let f = move |p: Point| [p[0].powi(k as i32) - 2.0 * p[1], (p[0] * p[1]).powi(k as i32 / 2) + p[1].powi(k as i32)];
            let coeffs = interpolate(&s, f);
            for _ in 0..20 {
                let (x, y) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                let got = evaluate_at(&s, &coeffs, [x, y]);
                let want = f([x, y]);
                assert!((got[0] - want[0]).abs() < 1e-13 && (got[1] - want[1]).abs() < 1e-13);
            }
        }
    }

    fn evaluate_at(s: &FemSpace, coeffs: &[f64], p: Point) -> [f64; 2] {
        for cell in 0..s.mesh().triangles.len() {
            let [a, b, c] = s.mesh().triangle_points(cell);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let r = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
            let t = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
            if r >= -1e-12 && t >= -1e-12 && r + t <= 1.0 + 1e-12 {
                let (vals, _) = s.basis().eval([r, t]);
                let mut out = [0.0; 2];
                for (l, &node) in s.cell_nodes(cell).iter().enumerate() {
                    for (comp, o) in out.iter_mut().enumerate() {
                        *o += vals[l] * coeffs[s.dof(node, comp)];
                    }
                }
                return out;
            }
        }
        panic!("point outside mesh");
    }

    #[test]
    fn boundary_faces_cover_every_boundary_edge() {
        let s = space(3, 3, 1);
        assert_eq!(s.boundary_faces().len(), 12);
        for f in s.boundary_faces() {
            let nodes = s.face_nodes(f);
            assert_eq!(nodes.len(), 4);
            let be = &s.mesh().boundary_edges[f.edge];
            assert_eq!(nodes[0], be.vertices[0]);
            assert_eq!(nodes[3], be.vertices[1]);
        }
    }

    #[test]
    fn sample_and_offset() {
        let s = space(1, 1, 2);
        let d = dirichlet_dofs(&s, &BoundaryRoles::all_dirichlet(), Role::DirichletDisplacement);
        assert_eq!(d.len(), 8);
        let v = d.sample(&s, |p| [p[0], 10.0 + p[1]]);
        for (dof, val) in d.dofs().iter().zip(v) {
            let p = s.node_coords()[dof / 2];
            assert_eq!(val, if dof % 2 == 0 { p[0] } else { 10.0 + p[1] });
        }
        assert_eq!(d.offset(3).dofs()[0], 3);
    }
}
