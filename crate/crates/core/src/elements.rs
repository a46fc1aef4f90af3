//! Lagrange bases on the reference triangle and quadrature rules.
//!
//! The reference triangle has vertices `(0,0)`, `(1,0)`, `(0,1)`. Local nodes
//! are numbered vertices first, then the nodes of edges `0->1`, `1->2`,
//! `2->0` (each listed from its first vertex to its second), then the
//! interior node of the cubic element.

use thiserror::Error;

use crate::mesh::Point;

/// Largest polynomial degree any implemented triangle rule integrates exactly.
pub const MAX_TRIANGLE_EXACTNESS: usize = 20;
/// Largest polynomial degree any implemented edge rule integrates exactly.
pub const MAX_EDGE_EXACTNESS: usize = 41;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElementError {
    #[error("Lagrange degree {0} not supported (expected 1, 2 or 3)")]
    UnsupportedDegree(usize),
    #[error("no quadrature rule with exactness {requested} (table ends at {max})")]
    ExactnessTooHigh { requested: usize, max: usize },
}

/// Gauss-Legendre points and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut points = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(m, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (points, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, m as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Quadrature on the reference triangle; weights sum to its area, 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A rule on the reference triangle exact for all polynomials of total degree
/// `min_exactness`.
///
/// Degrees 1 and 2 use the centroid and the three-point interior rule; higher
/// degrees use the conical (collapsed) product of Gauss-Legendre rules.
pub fn triangle_quadrature(min_exactness: usize) -> Result<QuadratureRule, ElementError> {
    match min_exactness {
        0 | 1 => Ok(QuadratureRule {
            points: vec![[1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            exactness_degree: 1,
        }),
        2 => Ok(QuadratureRule {
            points: vec![[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]],
            weights: vec![1.0 / 6.0; 3],
            exactness_degree: 2,
        }),
        d if d <= MAX_TRIANGLE_EXACTNESS => {
            // the collapsed map adds one degree in the first coordinate
            let m = (d + 3) / 2;
            let (gp, gw) = gauss_legendre(m);
            let (nodes, w1): (Vec<f64>, Vec<f64>) =
                gp.iter().zip(&gw).map(|(p, w)| (0.5 * (p + 1.0), 0.5 * w)).unzip();
            let mut points = Vec::with_capacity(m * m);
            let mut weights = Vec::with_capacity(m * m);
            for (s, ws) in nodes.iter().zip(&w1) {
                for (t, wt) in nodes.iter().zip(&w1) {
                    points.push([*s, (1.0 - s) * t]);
                    weights.push(ws * wt * (1.0 - s));
                }
            }
            Ok(QuadratureRule { points, weights, exactness_degree: 2 * m - 2 })
        }
        d => Err(ElementError::ExactnessTooHigh { requested: d, max: MAX_TRIANGLE_EXACTNESS }),
    }
}

/// Gauss rule on `[0, 1]`; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeQuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

pub fn edge_quadrature(min_exactness: usize) -> Result<EdgeQuadratureRule, ElementError> {
    if min_exactness > MAX_EDGE_EXACTNESS {
        return Err(ElementError::ExactnessTooHigh { requested: min_exactness, max: MAX_EDGE_EXACTNESS });
    }
    let m = min_exactness / 2 + 1;
    let (gp, gw) = gauss_legendre(m);
    Ok(EdgeQuadratureRule {
        points: gp.iter().map(|p| 0.5 * (p + 1.0)).collect(),
        weights: gw.iter().map(|w| 0.5 * w).collect(),
        exactness_degree: 2 * m - 1,
    })
}

const GRAD_BARY: [Point; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Nodal Lagrange basis of degree 1, 2 or 3 on the reference triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    degree: usize,
    nodes: Vec<Point>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Result<Self, ElementError> {
        if !(1..=3).contains(&degree) {
            return Err(ElementError::UnsupportedDegree(degree));
        }
        let verts: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut nodes = verts.to_vec();
        for e in 0..3 {
            let (a, b) = (verts[e], verts[(e + 1) % 3]);
            for s in 1..degree {
                let s = s as f64 / degree as f64;
                nodes.push([(1.0 - s) * a[0] + s * b[0], (1.0 - s) * a[1] + s * b[1]]);
            }
        }
        if degree == 3 {
            nodes.push([1.0 / 3.0, 1.0 / 3.0]);
        }
        Ok(Self { degree, nodes })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Local node indices on edge `e` (`e -> e+1`), ordered from its first vertex.
    pub fn edge_nodes(&self, e: usize) -> Vec<usize> {
        let per_edge = self.degree - 1;
        let mut out = vec![e];
        out.extend((0..per_edge).map(|s| 3 + e * per_edge + s));
        out.push((e + 1) % 3);
        out
    }

    /// Values and reference gradients of every basis function at `point`.
    pub fn eval(&self, point: Point) -> (Vec<f64>, Vec<Point>) {
        let mut values = vec![0.0; self.node_count()];
        let mut grads = vec![[0.0; 2]; self.node_count()];
        self.eval_into(point, &mut values, &mut grads);
        (values, grads)
    }

    pub fn eval_into(&self, point: Point, values: &mut [f64], grads: &mut [Point]) {
        let l = [1.0 - point[0] - point[1], point[0], point[1]];
        let g = GRAD_BARY;
        let comb = |a: f64, ga: Point, b: f64, gb: Point| [a * ga[0] + b * gb[0], a * ga[1] + b * gb[1]];
        match self.degree {
            1 => {
                values[..3].copy_from_slice(&l);
                grads[..3].copy_from_slice(&g);
            }
            2 => {
                for i in 0..3 {
                    values[i] = l[i] * (2.0 * l[i] - 1.0);
                    let s = 4.0 * l[i] - 1.0;
                    grads[i] = [s * g[i][0], s * g[i][1]];
                }
                for e in 0..3 {
                    let (a, b) = (e, (e + 1) % 3);
                    values[3 + e] = 4.0 * l[a] * l[b];
                    grads[3 + e] = comb(4.0 * l[b], g[a], 4.0 * l[a], g[b]);
                }
            }
            3 => {
                for i in 0..3 {
                    let x = l[i];
                    values[i] = 0.5 * x * (3.0 * x - 1.0) * (3.0 * x - 2.0);
                    let s = 0.5 * (27.0 * x * x - 18.0 * x + 2.0);
                    grads[i] = [s * g[i][0], s * g[i][1]];
                }
                for e in 0..3 {
                    for (slot, (a, b)) in [(e, (e + 1) % 3), ((e + 1) % 3, e)].into_iter().enumerate() {
                        let k = 3 + 2 * e + slot;
                        values[k] = 4.5 * l[a] * l[b] * (3.0 * l[a] - 1.0);
                        grads[k] = comb(4.5 * l[b] * (6.0 * l[a] - 1.0), g[a], 4.5 * l[a] * (3.0 * l[a] - 1.0), g[b]);
                    }
                }
                values[9] = 27.0 * l[0] * l[1] * l[2];
                let t0 = comb(27.0 * l[1] * l[2], g[0], 27.0 * l[0] * l[2], g[1]);
                grads[9] = [t0[0] + 27.0 * l[0] * l[1] * g[2][0], t0[1] + 27.0 * l[0] * l[1] * g[2][1]];
            }
            _ => unreachable!("degree validated in constructor"),
        }
    }
}

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub node_count: usize,
    /// `values[q * node_count + i]`
    pub values: Vec<f64>,
    pub grads: Vec<Point>,
}

impl Tabulation {
    pub fn new(basis: &LagrangeBasis, points: &[Point]) -> Self {
        let nc = basis.node_count();
        let mut values = vec![0.0; nc * points.len()];
        let mut grads = vec![[0.0; 2]; nc * points.len()];
        for (q, p) in points.iter().enumerate() {
            basis.eval_into(*p, &mut values[q * nc..(q + 1) * nc], &mut grads[q * nc..(q + 1) * nc]);
        }
        Self { node_count: nc, values, grads }
    }

    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.node_count..(q + 1) * self.node_count]
    }

    pub fn grads_at(&self, q: usize) -> &[Point] {
        &self.grads[q * self.node_count..(q + 1) * self.node_count]
    }
}
