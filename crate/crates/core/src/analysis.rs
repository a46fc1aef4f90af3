//! Error norms against the exact solution and convergence studies.

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::AffineMap;
use crate::elements::{triangle_quadrature, Tabulation};
use crate::mms::ManufacturedCase;
use crate::schemes::{initial_state, Discretization, Method, SchemeConfig, SchemeError, State, TimeStepper};
use crate::spaces::FemSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("study needs at least one row")]
    EmptyStudy,
    #[error("row {row}: {what}")]
    IrregularSequence { row: usize, what: String },
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Final-time errors of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorRecord {
    /// Full `H^1` norm of the displacement error.
    pub u_h1: f64,
    pub xi_l2: f64,
    pub p_l2: f64,
    /// Full `H^1` norm of the pressure error.
    pub p_h1: f64,
}

impl ErrorRecord {
    pub fn as_array(&self) -> [f64; 4] {
        [self.u_h1, self.xi_l2, self.p_l2, self.p_h1]
    }

    pub const NAMES: [&'static str; 4] = ["u_H1", "xi_L2", "p_L2", "p_H1"];
}

/// Default quadrature exactness for error norms: `2k + 4`.
pub fn error_exactness(disc: &Discretization) -> usize {
    2 * disc.u_space.degree() + 4
}

pub fn compute_errors(disc: &Discretization, state: &State, case: &ManufacturedCase) -> ErrorRecord {
    compute_errors_with(disc, state, case, error_exactness(disc))
}

struct FieldEval<'a> {
    space: &'a FemSpace,
    tab: Tabulation,
}

impl<'a> FieldEval<'a> {
    fn new(space: &'a FemSpace, points: &[[f64; 2]]) -> Self {
        Self { space, tab: Tabulation::new(space.basis(), points) }
    }

    /// Component `c` of the discrete field and its physical gradient at point `q` of `cell`.
    fn eval(&self, coeffs: &[f64], cell: usize, map: &AffineMap, q: usize, c: usize) -> (f64, [f64; 2]) {
        let nodes = self.space.cell_nodes(cell);
        let (vals, grads) = (self.tab.values_at(q), self.tab.grads_at(q));
        let (mut v, mut g) = (0.0, [0.0; 2]);
        for (i, &node) in nodes.iter().enumerate() {
            let a = coeffs[self.space.dof(node, c)];
            v += a * vals[i];
            g[0] += a * grads[i][0];
            g[1] += a * grads[i][1];
        }
        (v, map.grad(g))
    }
}

/// Errors at `state.t` using a quadrature rule of the given exactness.
pub fn compute_errors_with(disc: &Discretization, state: &State, case: &ManufacturedCase, exactness: usize) -> ErrorRecord {
    let rule = triangle_quadrature(exactness).expect("error quadrature within table");
    let (ue, xe, pe) = (
        FieldEval::new(&disc.u_space, &rule.points),
        FieldEval::new(&disc.xi_space, &rule.points),
        FieldEval::new(&disc.p_space, &rule.points),
    );
    let t = state.t;
    let ex = &*case.exact;
    // [u L2, u H1 semi, xi L2, p L2, p H1 semi]
    let sums = (0..disc.mesh.triangles.len())
        .into_par_iter()
        .map(|cell| {
            let map = AffineMap::new(&disc.mesh, cell);
            let mut acc = [0.0; 5];
            for q in 0..rule.len() {
                let w = rule.weights[q] * map.det().abs();
                let x = map.map(rule.points[q]);
                let (u, gu) = (ex.displacement(x, t), ex.displacement_grad(x, t));
                for c in 0..2 {
                    let (v, g) = ue.eval(&state.u, cell, &map, q, c);
                    acc[0] += w * (u[c] - v).powi(2);
                    acc[1] += w * ((gu[c][0] - g[0]).powi(2) + (gu[c][1] - g[1]).powi(2));
                }
                let (xi, _) = xe.eval(&state.xi, cell, &map, q, 0);
                acc[2] += w * (case.total_pressure(x, t) - xi).powi(2);
                let (p, gp) = pe.eval(&state.p, cell, &map, q, 0);
                let gpe = ex.pressure_grad(x, t);
                acc[3] += w * (ex.pressure(x, t) - p).powi(2);
                acc[4] += w * ((gpe[0] - gp[0]).powi(2) + (gpe[1] - gp[1]).powi(2));
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0; 5], |mut s, a| {
            s.iter_mut().zip(a).for_each(|(x, y)| *x += y);
            s
        });
    ErrorRecord {
        u_h1: (sums[0] + sums[1]).sqrt(),
        xi_l2: sums[2].sqrt(),
        p_l2: sums[3].sqrt(),
        p_h1: (sums[3] + sums[4]).sqrt(),
    }
}

/// `ln(e_coarse / e_fine) / ln(ratio)`; `None` when either error is not
/// positive or the ratio does not exceed 1.
pub fn convergence_order(e_coarse: f64, e_fine: f64, ratio: f64) -> Option<f64> {
    if e_coarse > 0.0 && e_fine > 0.0 && ratio > 1.0 && e_coarse.is_finite() && e_fine.is_finite() {
        Some((e_coarse / e_fine).ln() / ratio.ln())
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Orders with respect to the time-step ratio.
    Temporal,
    /// Orders with respect to the mesh-size ratio.
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    /// Subdivisions per side.
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub errors: ErrorRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub refinement: Refinement,
    pub rows: Vec<StudyRow>,
}

impl ConvergenceReport {
    /// Orders between each row and the one before it; the first row has none.
    pub fn orders(&self) -> Vec<[Option<f64>; 4]> {
        let mut out = vec![[None; 4]];
        for w in self.rows.windows(2) {
            let ratio = match self.refinement {
                Refinement::Temporal => w[0].dt / w[1].dt,
                Refinement::Spatial => w[0].h / w[1].h,
            };
            let (a, b) = (w[0].errors.as_array(), w[1].errors.as_array());
            out.push([0, 1, 2, 3].map(|i| convergence_order(a[i], b[i], ratio)));
        }
        out.truncate(self.rows.len());
        out
    }

    /// Orders between the last two rows.
    pub fn final_orders(&self) -> Option<[Option<f64>; 4]> {
        (self.rows.len() >= 2).then(|| *self.orders().last().expect("nonempty"))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, AnalysisError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AnalysisError::Pool(e.to_string()))
}

fn run_errors(
    disc: &Discretization,
    case: &ManufacturedCase,
    config: SchemeConfig,
    initial: State,
) -> Result<ErrorRecord, SchemeError> {
    let state = TimeStepper::new(disc, case, config)?.run(initial)?;
    Ok(compute_errors(disc, &state, case))
}

/// One run per time step on a fixed `n x n` mesh. Rows run on up to
/// `workers` threads and are reported in input order.
pub fn temporal_study(
    case: &ManufacturedCase,
    method: Method,
    n: usize,
    k: usize,
    l: usize,
    dts: &[f64],
    workers: usize,
) -> Result<ConvergenceReport, AnalysisError> {
    if dts.is_empty() {
        return Err(AnalysisError::EmptyStudy);
    }
    let ratio = dts.first().zip(dts.get(1)).map(|(a, b)| a / b);
    for (i, w) in dts.windows(2).enumerate() {
        let r = w[0] / w[1];
        if r <= 1.0 || (r - ratio.unwrap_or(r)).abs() > 1e-9 * r {
            return Err(AnalysisError::IrregularSequence { row: i + 1, what: "time steps must shrink by a constant factor".into() });
        }
    }
    let configs = dts
        .iter()
        .map(|&dt| SchemeConfig::new(method, dt, case.final_time, k, l))
        .collect::<Result<Vec<_>, _>>()?;
    let disc = Discretization::for_case(case, n, k, l)?;
    let initial = initial_state(&disc, case)?;
    let rows = pool(workers)?.install(|| {
        configs
            .par_iter()
            .with_max_len(1)
            .map(|&config| {
                run_errors(&disc, case, config, initial.clone()).map(|errors| StudyRow { n, h: 1.0 / n as f64, dt: config.dt, errors })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ConvergenceReport { refinement: Refinement::Temporal, rows })
}

/// One run per `(n, dt)` pair with `n` doubling between rows.
pub fn spatial_study(
    case: &ManufacturedCase,
    method: Method,
    pairs: &[(usize, f64)],
    k: usize,
    l: usize,
    workers: usize,
) -> Result<ConvergenceReport, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::EmptyStudy);
    }
    for (i, w) in pairs.windows(2).enumerate() {
        if w[1].0 != 2 * w[0].0 {
            return Err(AnalysisError::IrregularSequence { row: i + 1, what: "mesh size must halve between rows".into() });
        }
    }
    let configs = pairs
        .iter()
        .map(|&(_, dt)| SchemeConfig::new(method, dt, case.final_time, k, l))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = pool(workers)?.install(|| {
        pairs
            .par_iter()
            .zip(&configs)
            .with_max_len(1)
            .map(|(&(n, dt), &config)| {
                let disc = Discretization::for_case(case, n, k, l)?;
                let initial = initial_state(&disc, case)?;
                run_errors(&disc, case, config, initial).map(|errors| StudyRow { n, h: 1.0 / n as f64, dt, errors })
            })
            .collect::<Result<Vec<_>, SchemeError>>()
    })?;
    Ok(ConvergenceReport { refinement: Refinement::Spatial, rows })
}
