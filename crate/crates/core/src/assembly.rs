//! Finite element matrices and load vectors for the three-field model.

use rayon::prelude::*;
use thiserror::Error;

use crate::elements::{edge_quadrature, triangle_quadrature, ElementError, Tabulation};
use crate::linsolve::{CsrMatrix, TripletBuilder};
use crate::mesh::{BoundaryRoles, Mesh, Point, Role};
use crate::spaces::{DirichletSet, FemSpace, FieldValue};

const CELLS_PER_TASK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("invalid physical parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("spaces are built on different meshes")]
    MeshMismatch,
}

/// Material constants in nondimensional units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub young: f64,
    pub nu: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Specific storage coefficient.
    pub c0: f64,
    /// Biot-Willis constant.
    pub alpha: f64,
    /// Hydraulic conductivity.
    pub k: f64,
}

impl PhysicalParams {
    pub fn from_young(young: f64, nu: f64, c0: f64, alpha: f64, k: f64) -> Result<Self, AssemblyError> {
        check("E", young, young > 0.0)?;
        check("nu", nu, nu > 0.0 && nu < 0.5)?;
        let mu = young / (2.0 * (1.0 + nu));
        let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        Self::validated(Self { young, nu, mu, lambda, c0, alpha, k })
    }

    pub fn from_lame(mu: f64, lambda: f64, c0: f64, alpha: f64, k: f64) -> Result<Self, AssemblyError> {
        check("mu", mu, mu > 0.0)?;
        check("lambda", lambda, lambda > 0.0)?;
        let young = mu * (3.0 * lambda + 2.0 * mu) / (lambda + mu);
        let nu = lambda / (2.0 * (lambda + mu));
        Self::validated(Self { young, nu, mu, lambda, c0, alpha, k })
    }

    fn validated(p: Self) -> Result<Self, AssemblyError> {
        check("mu", p.mu, p.mu > 0.0 && p.mu.is_finite())?;
        check("lambda", p.lambda, p.lambda > 0.0 && p.lambda.is_finite())?;
        check("c0", p.c0, p.c0 >= 0.0 && p.c0.is_finite())?;
        check("alpha", p.alpha, p.alpha > 0.0 && p.alpha.is_finite())?;
        check("K", p.k, p.k > 0.0 && p.k.is_finite())?;
        Ok(p)
    }

    /// `c0 + alpha^2 / lambda`, the coefficient of the pressure mass term.
    pub fn storage(&self) -> f64 {
        self.c0 + self.alpha * self.alpha / self.lambda
    }
}

fn check(name: &'static str, value: f64, ok: bool) -> Result<(), AssemblyError> {
    if ok {
        Ok(())
    } else {
        Err(AssemblyError::InvalidParameter { name, value })
    }
}

/// Affine map from the reference triangle onto a mesh cell.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    origin: Point,
    jac: [[f64; 2]; 2],
    det: f64,
}

impl AffineMap {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let [a, b, c] = mesh.triangle_points(cell);
        let jac = [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        Self { origin: a, jac, det }
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn map(&self, r: Point) -> Point {
        [
            self.origin[0] + self.jac[0][0] * r[0] + self.jac[0][1] * r[1],
            self.origin[1] + self.jac[1][0] * r[0] + self.jac[1][1] * r[1],
        ]
    }

    /// Physical gradient from a reference gradient.
    pub fn grad(&self, g: Point) -> Point {
        let j = &self.jac;
        [(j[1][1] * g[0] - j[1][0] * g[1]) / self.det, (-j[0][1] * g[0] + j[0][0] * g[1]) / self.det]
    }
}

/// Sparse matrices of the six bilinear forms.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    /// Elasticity, `2 mu (eps(u), eps(v))`, on `V_h`.
    pub a1: CsrMatrix,
    /// `(phi, div v)` with rows in `W_h` and columns in `V_h`.
    pub b: CsrMatrix,
    /// `(1/lambda)` mass on `W_h`.
    pub a2: CsrMatrix,
    /// `(alpha/lambda)` mass with rows in `W_h` and columns in `M_h`.
    pub c: CsrMatrix,
    /// `(c0 + alpha^2/lambda)` mass on `M_h`.
    pub a3: CsrMatrix,
    /// `K` stiffness on `M_h`.
    pub d: CsrMatrix,
}

/// Values and physical gradients of a space's basis at the points of one cell.
struct CellEval<'a> {
    tab: &'a Tabulation,
    grads: Vec<Point>,
}

impl<'a> CellEval<'a> {
    fn new(tab: &'a Tabulation) -> Self {
        Self { tab, grads: vec![[0.0; 2]; tab.grads.len()] }
    }

    fn update(&mut self, map: &AffineMap) {
        for (out, g) in self.grads.iter_mut().zip(&self.tab.grads) {
            *out = map.grad(*g);
        }
    }

    fn values(&self, q: usize) -> &[f64] {
        self.tab.values_at(q)
    }

    fn grads(&self, q: usize) -> &[Point] {
        let nc = self.tab.node_count;
        &self.grads[q * nc..(q + 1) * nc]
    }
}

/// Runs `per_cell` over all cells in parallel chunks, concatenating the
/// triplets in cell order.
fn assemble_cells<F>(mesh: &Mesh, nrows: usize, ncols: usize, per_cell: F) -> CsrMatrix
where
    F: Fn(usize, &mut Vec<(usize, usize, f64)>) + Sync,
{
    let ncells = mesh.triangles.len();
    let chunks: Vec<Vec<(usize, usize, f64)>> = (0..ncells.div_ceil(CELLS_PER_TASK))
        .into_par_iter()
        .map(|chunk| {
            let mut out = Vec::new();
            for cell in chunk * CELLS_PER_TASK..((chunk + 1) * CELLS_PER_TASK).min(ncells) {
                per_cell(cell, &mut out);
            }
            out
        })
        .collect();
    let total = chunks.iter().map(Vec::len).sum();
    let mut builder = TripletBuilder::with_capacity(nrows, ncols, total);
    for chunk in chunks {
        for (i, j, v) in chunk {
            builder.push(i, j, v);
        }
    }
    builder.build()
}

fn same_mesh(a: &FemSpace, b: &FemSpace) -> Result<(), AssemblyError> {
    if std::ptr::eq(a.mesh(), b.mesh()) || a.mesh() == b.mesh() {
        Ok(())
    } else {
        Err(AssemblyError::MeshMismatch)
    }
}

/// `coef * (phi_j, psi_i)` with rows in `rows` and columns in `cols` (scalar spaces).
pub fn mass_matrix(rows: &FemSpace, cols: &FemSpace, coef: f64) -> Result<CsrMatrix, AssemblyError> {
    same_mesh(rows, cols)?;
    let rule = triangle_quadrature(rows.degree() + cols.degree())?;
    let (tr, tc) = (Tabulation::new(rows.basis(), &rule.points), Tabulation::new(cols.basis(), &rule.points));
    let mesh = rows.mesh();
    Ok(assemble_cells(mesh, rows.total_dofs(), cols.total_dofs(), |cell, out| {
        let det = AffineMap::new(mesh, cell).det();
        let (rn, cn) = (rows.cell_nodes(cell), cols.cell_nodes(cell));
        for (i, &gi) in rn.iter().enumerate() {
            for (j, &gj) in cn.iter().enumerate() {
                let v: f64 = (0..rule.len()).map(|q| rule.weights[q] * tr.values_at(q)[i] * tc.values_at(q)[j]).sum();
                out.push((gi, gj, coef * det * v));
            }
        }
    }))
}

/// `coef * (grad phi_j, grad psi_i)` on a scalar space.
pub fn stiffness_matrix(space: &FemSpace, coef: f64) -> Result<CsrMatrix, AssemblyError> {
    let rule = triangle_quadrature(2 * space.degree() - 2)?;
    let tab = Tabulation::new(space.basis(), &rule.points);
    let mesh = space.mesh();
    Ok(assemble_cells(mesh, space.total_dofs(), space.total_dofs(), |cell, out| {
        let map = AffineMap::new(mesh, cell);
        let mut ev = CellEval::new(&tab);
        ev.update(&map);
        let nodes = space.cell_nodes(cell);
        for (i, &gi) in nodes.iter().enumerate() {
            for (j, &gj) in nodes.iter().enumerate() {
                let v: f64 = (0..rule.len())
                    .map(|q| {
                        let g = ev.grads(q);
                        rule.weights[q] * (g[i][0] * g[j][0] + g[i][1] * g[j][1])
                    })
                    .sum();
                out.push((gi, gj, coef * map.det() * v));
            }
        }
    }))
}

/// `2 mu (eps(u), eps(v))` on a vector space.
pub fn elasticity_matrix(space: &FemSpace, mu: f64) -> Result<CsrMatrix, AssemblyError> {
    let rule = triangle_quadrature(2 * space.degree() - 2)?;
    let tab = Tabulation::new(space.basis(), &rule.points);
    let mesh = space.mesh();
    Ok(assemble_cells(mesh, space.total_dofs(), space.total_dofs(), |cell, out| {
        let map = AffineMap::new(mesh, cell);
        let mut ev = CellEval::new(&tab);
        ev.update(&map);
        let nodes = space.cell_nodes(cell);
        for (i, &gi) in nodes.iter().enumerate() {
            for (j, &gj) in nodes.iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        let v: f64 = (0..rule.len())
                            .map(|q| {
                                let g = ev.grads(q);
                                let dot = if a == b { g[i][0] * g[j][0] + g[i][1] * g[j][1] } else { 0.0 };
                                rule.weights[q] * (dot + g[i][b] * g[j][a])
                            })
                            .sum();
                        out.push((space.dof(gi, a), space.dof(gj, b), mu * map.det() * v));
                    }
                }
            }
        }
    }))
}

/// `(psi_i, div v_j)` with rows in the scalar space and columns in the vector space.
pub fn divergence_matrix(scalar: &FemSpace, vector: &FemSpace) -> Result<CsrMatrix, AssemblyError> {
    same_mesh(scalar, vector)?;
    let rule = triangle_quadrature(scalar.degree() + vector.degree() - 1)?;
    let (ts, tv) = (Tabulation::new(scalar.basis(), &rule.points), Tabulation::new(vector.basis(), &rule.points));
    let mesh = scalar.mesh();
    Ok(assemble_cells(mesh, scalar.total_dofs(), vector.total_dofs(), |cell, out| {
        let map = AffineMap::new(mesh, cell);
        let mut ev = CellEval::new(&tv);
        ev.update(&map);
        let (sn, vn) = (scalar.cell_nodes(cell), vector.cell_nodes(cell));
        for (i, &gi) in sn.iter().enumerate() {
            for (j, &gj) in vn.iter().enumerate() {
                for a in 0..2 {
                    let v: f64 = (0..rule.len()).map(|q| rule.weights[q] * ts.values_at(q)[i] * ev.grads(q)[j][a]).sum();
                    out.push((gi, vector.dof(gj, a), map.det() * v));
                }
            }
        }
    }))
}

pub fn assemble_forms(
    u_space: &FemSpace,
    xi_space: &FemSpace,
    p_space: &FemSpace,
    params: &PhysicalParams,
) -> Result<OperatorSet, AssemblyError> {
    same_mesh(u_space, xi_space)?;
    same_mesh(u_space, p_space)?;
    let lambda = params.lambda;
    Ok(OperatorSet {
        a1: elasticity_matrix(u_space, params.mu)?,
        b: divergence_matrix(xi_space, u_space)?,
        a2: mass_matrix(xi_space, xi_space, 1.0 / lambda)?,
        c: mass_matrix(xi_space, p_space, params.alpha / lambda)?,
        a3: mass_matrix(p_space, p_space, params.storage())?,
        d: stiffness_matrix(p_space, params.k)?,
    })
}

/// Quadrature exactness used for loads with smooth, non-polynomial data.
pub fn load_exactness(space: &FemSpace) -> usize {
    2 * space.degree() + 4
}

/// `(source, phi_i)` for every basis function.
pub fn assemble_load<V: FieldValue>(
    space: &FemSpace,
    source: impl Fn(Point) -> V + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    assemble_load_with(space, load_exactness(space), |p, phi, _| {
        let v = source(p);
        (0..V::COMPONENTS).map(|c| v.component(c) * phi).collect::<SmallVec>()
    })
}

/// `(g, grad psi_i)` on a scalar space.
pub fn assemble_gradient_load(
    space: &FemSpace,
    g: impl Fn(Point) -> [f64; 2] + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    assert_eq!(space.components(), 1);
    assemble_load_with(space, load_exactness(space), |p, _, grad| {
        let v = g(p);
        SmallVec::one(v[0] * grad[0] + v[1] * grad[1])
    })
}

/// `(S, grad v_i)` on a vector space, with `S[a][l]` multiplying `d_l v_a`.
pub fn assemble_tensor_load(
    space: &FemSpace,
    s: impl Fn(Point) -> [[f64; 2]; 2] + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    assert_eq!(space.components(), 2);
    assemble_load_with(space, load_exactness(space), |p, _, grad| {
        let m = s(p);
        SmallVec::two(m[0][0] * grad[0] + m[0][1] * grad[1], m[1][0] * grad[0] + m[1][1] * grad[1])
    })
}

/// Up to two components, without allocating.
#[derive(Debug, Clone, Copy)]
struct SmallVec {
    len: usize,
    data: [f64; 2],
}

impl SmallVec {
    fn one(a: f64) -> Self {
        Self { len: 1, data: [a, 0.0] }
    }

    fn two(a: f64, b: f64) -> Self {
        Self { len: 2, data: [a, b] }
    }
}

impl FromIterator<f64> for SmallVec {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut out = Self { len: 0, data: [0.0; 2] };
        for v in iter {
            out.data[out.len] = v;
            out.len += 1;
        }
        out
    }
}

/// Generic cell-load loop; `integrand(x, phi_i(x), grad phi_i(x))` gives the
/// contribution to each component of DOF `i`.
fn assemble_load_with(
    space: &FemSpace,
    exactness: usize,
    integrand: impl Fn(Point, f64, Point) -> SmallVec + Sync,
) -> Result<Vec<f64>, AssemblyError> {
    let rule = triangle_quadrature(exactness)?;
    let tab = Tabulation::new(space.basis(), &rule.points);
    let mesh = space.mesh();
    let ncells = mesh.triangles.len();
    let comps = space.components();
    let parts: Vec<Vec<(usize, f64)>> = (0..ncells.div_ceil(CELLS_PER_TASK))
        .into_par_iter()
        .map(|chunk| {
            let mut out = Vec::new();
            let mut ev = CellEval::new(&tab);
            for cell in chunk * CELLS_PER_TASK..((chunk + 1) * CELLS_PER_TASK).min(ncells) {
                let map = AffineMap::new(mesh, cell);
                ev.update(&map);
                let nodes = space.cell_nodes(cell);
                let mut local = vec![0.0; nodes.len() * comps];
                for q in 0..rule.len() {
                    let x = map.map(rule.points[q]);
                    let w = rule.weights[q] * map.det();
                    let (vals, grads) = (ev.values(q), ev.grads(q));
                    for i in 0..nodes.len() {
                        let c = integrand(x, vals[i], grads[i]);
                        for a in 0..c.len {
                            local[i * comps + a] += w * c.data[a];
                        }
                    }
                }
                for (i, &node) in nodes.iter().enumerate() {
                    for a in 0..comps {
                        out.push((space.dof(node, a), local[i * comps + a]));
                    }
                }
            }
            out
        })
        .collect();
    let mut rhs = vec![0.0; space.total_dofs()];
    for part in parts {
        for (i, v) in part {
            rhs[i] += v;
        }
    }
    Ok(rhs)
}

/// `<data, phi_i>` over the boundary edges carrying role `which`.
///
/// `data` receives the point and the unit outward normal.
pub fn assemble_boundary_load<V: FieldValue>(
    space: &FemSpace,
    roles: &BoundaryRoles,
    which: Role,
    data: impl Fn(Point, Point) -> V,
) -> Result<Vec<f64>, AssemblyError> {
    assert_eq!(V::COMPONENTS, space.components(), "data and space component counts differ");
    let mut rhs = vec![0.0; space.total_dofs()];
    let tags = roles.tags(which);
    if tags.is_empty() {
        return Ok(rhs);
    }
    let rule = edge_quadrature(load_exactness(space))?;
    let mesh = space.mesh();
    let basis = space.basis();
    let mut vals = vec![0.0; basis.node_count()];
    let mut grads = vec![[0.0; 2]; basis.node_count()];
    for face in space.boundary_faces() {
        let edge = &mesh.boundary_edges[face.edge];
        if !tags.contains(edge.tag) {
            continue;
        }
        let normal = crate::mesh::outward_normal(mesh, edge);
        let [a, b] = edge.vertices.map(|v| mesh.vertices[v]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let nodes = space.cell_nodes(face.cell);
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let r = match face.local_edge {
                0 => [*s, 0.0],
                1 => [1.0 - s, *s],
                _ => [0.0, 1.0 - s],
            };
            basis.eval_into(r, &mut vals, &mut grads);
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let v = data(x, normal);
            for l in basis.edge_nodes(face.local_edge) {
                for c in 0..V::COMPONENTS {
                    rhs[space.dof(nodes[l], c)] += w * len * vals[l] * v.component(c);
                }
            }
        }
    }
    Ok(rhs)
}

/// A matrix with Dirichlet rows and columns eliminated symmetrically.
///
/// Constrained rows and columns are replaced by the identity; the removed
/// column entries are kept to lift right-hand sides.
#[derive(Debug, Clone)]
pub struct Elimination {
    matrix: CsrMatrix,
    lift: CsrMatrix,
    constrained: DirichletSet,
}

impl Elimination {
    pub fn new(a: &CsrMatrix, constrained: &DirichletSet) -> Self {
        let n = a.nrows();
        let mut mask = vec![false; n];
        for &d in constrained.dofs() {
            mask[d] = true;
        }
        let mut kept = TripletBuilder::with_capacity(n, n, a.nnz());
        let mut lift = TripletBuilder::new(n, n);
        for (i, j, v) in a.triplets() {
            match (mask[i], mask[j]) {
                (false, false) => kept.push(i, j, v),
                (false, true) => lift.push(i, j, v),
                _ => {}
            }
        }
        for &d in constrained.dofs() {
            kept.push(d, d, 1.0);
        }
        Self { matrix: kept.build(), lift: lift.build(), constrained: constrained.clone() }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn constrained(&self) -> &DirichletSet {
        &self.constrained
    }

    /// Moves the known columns to the right-hand side and writes `values`
    /// (ordered like the constrained DOFs) into the constrained rows.
    pub fn lift(&self, rhs: &mut [f64], values: &[f64]) {
        assert_eq!(values.len(), self.constrained.len());
        let mut g = vec![0.0; rhs.len()];
        for (&d, &v) in self.constrained.dofs().iter().zip(values) {
            g[d] = v;
        }
        let ag = self.lift.mul_vec(&g);
        for (r, x) in rhs.iter_mut().zip(ag) {
            *r -= x;
        }
        for (&d, &v) in self.constrained.dofs().iter().zip(values) {
            rhs[d] = v;
        }
    }
}

/// One-shot symmetric elimination of `constrained` with prescribed `values`.
pub fn apply_dirichlet(
    a: &CsrMatrix,
    rhs: &[f64],
    constrained: &DirichletSet,
    values: &[f64],
) -> (CsrMatrix, Vec<f64>) {
    let elim = Elimination::new(a, constrained);
    let mut b = rhs.to_vec();
    elim.lift(&mut b, values);
    (elim.into_matrix(), b)
}
