//! Projections for initial data and the two coupled time-stepping methods.
//!
//! Each step solves one monolithic system in `(u, xi, p)`. The second and
//! third block rows are negated so the matrix is symmetric:
//!
//! ```text
//! [  A1    -B^T       0         ] [u]   [ F                  ]
//! [ -B     -A2        C         ] [xi] = [ 0                  ]
//! [  0      C^T  -(A3 + th dt D) ] [p]   [ -(dt G + A3 p^n - C^T xi^n + ...) ]
//! ```
//!
//! with `th = 1` for backward Euler and `th = 1/2` for the Crank-Nicolson
//! flow row.

use std::sync::Arc;

use thiserror::Error;

use crate::assembly::{
    assemble_boundary_load, assemble_forms, assemble_gradient_load, assemble_load, assemble_tensor_load,
    AssemblyError, Elimination, OperatorSet, PhysicalParams,
};
use crate::linsolve::{factorize_shared, factorize_with_threshold, norm2, CsrMatrix, Factorization, SolveError, TripletBuilder};
use crate::mesh::{unit_square_mesh, BoundaryRoles, Mesh, MeshError, Role};
use crate::mms::ManufacturedCase;
use crate::spaces::{build_space, dirichlet_dofs, DirichletSet, FemSpace, SpaceError};

/// Relative size of the total-pressure penalty used inside the Stokes projection solve.
const STOKES_PENALTY: f64 = 1e-3;
const STOKES_PIVOT_THRESHOLD: f64 = 1e-10;
const STOKES_TOLERANCE: f64 = 1e-12;
const STOKES_STEP_TOLERANCE: f64 = 1e-14;
const STOKES_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("final time {final_time} is not an integer multiple of dt = {dt}")]
    StepMismatch { final_time: f64, dt: f64 },
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("displacement degree k = {0} unsupported (need 2 or 3)")]
    DisplacementDegree(usize),
    #[error("pressure degree l = {0} unsupported (need 1, 2 or 3)")]
    PressureDegree(usize),
    #[error("state does not match the discretization: {0}")]
    StateMismatch(&'static str),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Backward Euler in every row.
    Method1,
    /// Backward Euler for the mechanics rows, Crank-Nicolson for the flow row.
    Method2,
}

impl Method {
    /// Weight of the new time level in the flow row.
    pub fn theta(self) -> f64 {
        match self {
            Method::Method1 => 1.0,
            Method::Method2 => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub method: Method,
    pub dt: f64,
    pub final_time: f64,
    /// Displacement degree; total pressure uses `k - 1`.
    pub k: usize,
    /// Pressure degree.
    pub l: usize,
    steps: usize,
}

impl SchemeConfig {
    pub fn new(method: Method, dt: f64, final_time: f64, k: usize, l: usize) -> Result<Self, SchemeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SchemeError::BadStep(dt));
        }
        if !(2..=3).contains(&k) {
            return Err(SchemeError::DisplacementDegree(k));
        }
        if !(1..=3).contains(&l) {
            return Err(SchemeError::PressureDegree(l));
        }
        let ratio = final_time / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-12 * steps.max(1.0) {
            return Err(SchemeError::StepMismatch { final_time, dt });
        }
        Ok(Self { method, dt, final_time, k, l, steps: steps as usize })
    }

    /// Number of time steps, `T / dt`.
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Discrete coefficients at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn zeros(disc: &Discretization, t: f64) -> Self {
        Self {
            u: vec![0.0; disc.u_space.total_dofs()],
            xi: vec![0.0; disc.xi_space.total_dofs()],
            p: vec![0.0; disc.p_space.total_dofs()],
            t,
        }
    }
}

/// Mesh, spaces, operators and constraints for one `(n, k, l)` configuration.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub u_space: FemSpace,
    pub xi_space: FemSpace,
    pub p_space: FemSpace,
    pub params: PhysicalParams,
    pub roles: BoundaryRoles,
    pub ops: OperatorSet,
    pub u_bc: DirichletSet,
    pub p_bc: DirichletSet,
}

impl Discretization {
    pub fn new(
        mesh: Arc<Mesh>,
        k: usize,
        l: usize,
        params: PhysicalParams,
        roles: BoundaryRoles,
    ) -> Result<Self, SchemeError> {
        if !(2..=3).contains(&k) {
            return Err(SchemeError::DisplacementDegree(k));
        }
        if !(1..=3).contains(&l) {
            return Err(SchemeError::PressureDegree(l));
        }
        let u_space = build_space(mesh.clone(), k, 2)?;
        let xi_space = build_space(mesh.clone(), k - 1, 1)?;
        let p_space = build_space(mesh.clone(), l, 1)?;
        let ops = assemble_forms(&u_space, &xi_space, &p_space, &params)?;
        let u_bc = dirichlet_dofs(&u_space, &roles, Role::DirichletDisplacement);
        let p_bc = dirichlet_dofs(&p_space, &roles, Role::DirichletPressure);
        Ok(Self { mesh, u_space, xi_space, p_space, params, roles, ops, u_bc, p_bc })
    }

    /// Uniform `n x n` mesh with the parameters and roles of `case`.
    pub fn for_case(case: &ManufacturedCase, n: usize, k: usize, l: usize) -> Result<Self, SchemeError> {
        Self::new(Arc::new(unit_square_mesh(n)?), k, l, case.params, case.roles)
    }

    /// Sizes of the `u`, `xi` and `p` blocks.
    pub fn block_sizes(&self) -> [usize; 3] {
        [self.u_space.total_dofs(), self.xi_space.total_dofs(), self.p_space.total_dofs()]
    }

    pub fn total_dofs(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Constraints of the monolithic system.
    fn monolithic_constraints(&self) -> DirichletSet {
        let [nu, nxi, _] = self.block_sizes();
        let mut dofs = self.u_bc.dofs().to_vec();
        dofs.extend(self.p_bc.offset(nu + nxi).dofs());
        DirichletSet::from_dofs(dofs)
    }

    /// Exact boundary values at `t`, ordered like [`Self::monolithic_constraints`].
    fn boundary_values(&self, case: &ManufacturedCase, t: f64) -> Vec<f64> {
        let mut v = self.u_bc.sample(&self.u_space, |x| case.displacement(x, t));
        v.extend(self.p_bc.sample(&self.p_space, |x| case.pressure(x, t)));
        v
    }

    /// `(f, v) + <h, v>` at time `t`.
    fn mechanics_load(&self, case: &ManufacturedCase, t: f64) -> Result<Vec<f64>, SchemeError> {
        let mut f = assemble_load(&self.u_space, |x| case.body_force(x, t))?;
        let h = assemble_boundary_load(&self.u_space, &self.roles, Role::Traction, |x, n| case.traction(x, n, t))?;
        f.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        Ok(f)
    }

    /// `(Q_s, psi) + <g2, psi>` at time `t`.
    fn flow_load(&self, case: &ManufacturedCase, t: f64) -> Result<Vec<f64>, SchemeError> {
        let mut g = assemble_load(&self.p_space, |x| case.source(x, t))?;
        let b = assemble_boundary_load(&self.p_space, &self.roles, Role::Flux, |x, n| case.flux(x, n, t))?;
        g.iter_mut().zip(b).for_each(|(a, c)| *a += c);
        Ok(g)
    }
}

/// Sign-symmetric monolithic matrix before boundary conditions.
pub fn monolithic_matrix(disc: &Discretization, method: Method, dt: f64) -> CsrMatrix {
    let [nu, nxi, np] = disc.block_sizes();
    let n = nu + nxi + np;
    let o = &disc.ops;
    let cap = o.a1.nnz() + 2 * o.b.nnz() + o.a2.nnz() + 2 * o.c.nnz() + o.a3.nnz() + o.d.nnz();
    let mut t = TripletBuilder::with_capacity(n, n, cap);
    t.add_block(&o.a1, 0, 0, 1.0);
    t.add_block_transposed(&o.b, 0, nu, -1.0);
    t.add_block(&o.b, nu, 0, -1.0);
    t.add_block(&o.a2, nu, nu, -1.0);
    t.add_block(&o.c, nu, nu + nxi, 1.0);
    t.add_block_transposed(&o.c, nu + nxi, nu, 1.0);
    t.add_block(&o.a3, nu + nxi, nu + nxi, -1.0);
    t.add_block(&o.d, nu + nxi, nu + nxi, -method.theta() * dt);
    t.build()
}

fn check_len(v: &[f64], n: usize, what: &'static str) -> Result<(), SchemeError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(SchemeError::StateMismatch(what))
    }
}

/// Discrete `(u, xi)` with `a1(u_h, v) - b(v, xi_h) = a1(u, v) - b(v, xi)` and
/// `b(u_h, phi) = b(u, phi)`, taking displacement boundary values from the
/// exact field at `t`.
///
/// Without a traction boundary `xi_h` is only determined up to a constant,
/// which is fixed by matching the mean of the exact `xi`.
pub fn stokes_projection(
    disc: &Discretization,
    case: &ManufacturedCase,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>), SchemeError> {
    let [nu, nxi, _] = disc.block_sizes();
    let o = &disc.ops;
    let n0 = nu + nxi;
    let mut trip = TripletBuilder::with_capacity(n0, n0, o.a1.nnz() + 2 * o.b.nnz() + o.a2.nnz());
    trip.add_block(&o.a1, 0, 0, 1.0);
    trip.add_block_transposed(&o.b, 0, nu, -1.0);
    trip.add_block(&o.b, nu, 0, -1.0);
    let mut rhs = assemble_tensor_load(&disc.u_space, |x| case.stress(x, t))?;
    rhs.extend(assemble_load(&disc.xi_space, |x| -case.divergence(x, t))?);

    // Without a traction boundary, constants lie in the kernel of B^T; a
    // multiplier column -m (m_i = integral of phi_i) fixes the mean of xi.
    let border = if disc.roles.traction.is_empty() {
        let mut c = vec![0.0; n0];
        for (ci, mi) in c[nu..].iter_mut().zip(assemble_load(&disc.xi_space, |_| 1.0)?) {
            *ci = -mi;
        }
        let mean: f64 = assemble_load(&disc.xi_space, |x| case.total_pressure(x, t))?.iter().sum();
        let scale = norm2(&c);
        c.iter_mut().for_each(|v| *v /= scale);
        Some((c, -mean / scale))
    } else {
        None
    };

    let base = trip.clone().build();
    // the penalized matrix is quasi-definite, so it factorizes with diagonal pivots
    let eps = STOKES_PENALTY / (2.0 * disc.params.mu);
    trip.add_block(&o.a2, nu, nu, -eps * disc.params.lambda);
    let values = disc.u_bc.sample(&disc.u_space, |x| case.displacement(x, t));
    let penalized = Elimination::new(&trip.build(), &disc.u_bc);
    let factor = factorize_with_threshold(Arc::new(penalized.into_matrix()), STOKES_PIVOT_THRESHOLD)?;

    let sol = match border {
        None => {
            let exact = Elimination::new(&base, &disc.u_bc);
            exact.lift(&mut rhs, &values);
            refine_with(exact.matrix(), &rhs, |r| factor.solve(r))?
        }
        Some((c, beta)) => {
            let mut exact = TripletBuilder::with_capacity(n0 + 1, n0 + 1, base.nnz() + 2 * nxi);
            exact.add_block(&base, 0, 0, 1.0);
            for (i, &ci) in c.iter().enumerate().filter(|(_, c)| **c != 0.0) {
                exact.push(i, n0, ci);
                exact.push(n0, i, ci);
            }
            let exact = Elimination::new(&exact.build(), &disc.u_bc);
            rhs.push(beta);
            exact.lift(&mut rhs, &values);
            // bordered solve: [[K, c], [c^T, 0]] via the scalar Schur complement
            let z = factor.solve(&c)?;
            let ctz: f64 = c.iter().zip(&z).map(|(a, b)| a * b).sum();
            refine_with(exact.matrix(), &rhs, |r| {
                let y = factor.solve(&r[..n0])?;
                let cty: f64 = c.iter().zip(&y).map(|(a, b)| a * b).sum();
                let mult = (cty - r[n0]) / ctz;
                let mut x: Vec<f64> = y.iter().zip(&z).map(|(y, z)| y - z * mult).collect();
                x.push(mult);
                Ok(x)
            })?
        }
    };
    Ok((sol[..nu].to_vec(), sol[nu..n0].to_vec()))
}

/// Solves `a x = b` by iterative refinement with an approximate inverse.
fn refine_with(
    a: &CsrMatrix,
    b: &[f64],
    approx: impl Fn(&[f64]) -> Result<Vec<f64>, SolveError>,
) -> Result<Vec<f64>, SolveError> {
    let bnorm = norm2(b);
    let mut x = vec![0.0; b.len()];
    let mut residual = 1.0;
    if bnorm == 0.0 {
        return Ok(x);
    }
    for _ in 0..STOKES_MAX_ITERATIONS {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        residual = norm2(&r) / bnorm;
        let dx = approx(&r)?;
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        if residual < STOKES_TOLERANCE && norm2(&dx) <= STOKES_STEP_TOLERANCE * norm2(&x) {
            return Ok(x);
        }
    }
    Err(SolveError::NotConverged { residual, tolerance: STOKES_TOLERANCE })
}

/// Discrete `p` with `d(p_h, psi) = d(p, psi)` for test functions vanishing on
/// the pressure Dirichlet boundary, interpolating the exact `p` there.
pub fn elliptic_projection(disc: &Discretization, case: &ManufacturedCase, t: f64) -> Result<Vec<f64>, SchemeError> {
    let k = disc.params.k;
    let mut rhs = assemble_gradient_load(&disc.p_space, |x| {
        let g = case.exact.pressure_grad(x, t);
        [k * g[0], k * g[1]]
    })?;
    let elim = Elimination::new(&disc.ops.d, &disc.p_bc);
    elim.lift(&mut rhs, &disc.p_bc.sample(&disc.p_space, |x| case.pressure(x, t)));
    Ok(factorize_shared(Arc::new(elim.into_matrix()))?.solve(&rhs)?)
}

/// Projections of the exact fields at `t = 0`.
pub fn initial_state(disc: &Discretization, case: &ManufacturedCase) -> Result<State, SchemeError> {
    let (u, xi) = stokes_projection(disc, case, 0.0)?;
    let p = elliptic_projection(disc, case, 0.0)?;
    Ok(State { u, xi, p, t: 0.0 })
}

/// Advances states with one factorization of the monolithic matrix.
pub struct TimeStepper<'a> {
    disc: &'a Discretization,
    case: &'a ManufacturedCase,
    config: SchemeConfig,
    elim: Elimination,
    factor: Factorization,
    factorizations: usize,
    /// Flow load at the current time level, reused by the Crank-Nicolson row.
    flow_prev: Option<(f64, Vec<f64>)>,
}

impl<'a> TimeStepper<'a> {
    pub fn new(disc: &'a Discretization, case: &'a ManufacturedCase, config: SchemeConfig) -> Result<Self, SchemeError> {
        let matrix = monolithic_matrix(disc, config.method, config.dt);
        let elim = Elimination::new(&matrix, &disc.monolithic_constraints());
        drop(matrix);
        let factor = factorize_shared(Arc::new(elim.matrix().clone()))?;
        Ok(Self { disc, case, config, elim, factor, factorizations: 1, flow_prev: None })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    /// How many times the monolithic matrix has been factorized.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Eliminated monolithic matrix.
    pub fn matrix(&self) -> &CsrMatrix {
        self.elim.matrix()
    }

    pub fn factorization(&self) -> &Factorization {
        &self.factor
    }

    /// Advances `state` from `t^n` to `t^n + dt`.
    pub fn step(&mut self, state: &State) -> Result<State, SchemeError> {
        let disc = self.disc;
        let [nu, nxi, np] = disc.block_sizes();
        check_len(&state.u, nu, "displacement length")?;
        check_len(&state.xi, nxi, "total pressure length")?;
        check_len(&state.p, np, "pressure length")?;
        let (dt, theta) = (self.config.dt, self.config.method.theta());
        let t_new = state.t + dt;
        let o = &disc.ops;

        let g_new = disc.flow_load(self.case, t_new)?;
        let mut flow = o.a3.mul_vec(&state.p);
        let ct_xi = o.c.transpose().mul_vec(&state.xi);
        for (r, c) in flow.iter_mut().zip(&ct_xi) {
            *r -= c;
        }
        for (r, g) in flow.iter_mut().zip(&g_new) {
            *r += theta * dt * g;
        }
        if theta < 1.0 {
            let g_old = match self.flow_prev.take() {
                Some((t, g)) if t == state.t => g,
                _ => disc.flow_load(self.case, state.t)?,
            };
            let dp = o.d.mul_vec(&state.p);
            for ((r, g), d) in flow.iter_mut().zip(&g_old).zip(&dp) {
                *r += (1.0 - theta) * dt * (g - d);
            }
        }

        let mut rhs = disc.mechanics_load(self.case, t_new)?;
        rhs.resize(nu + nxi, 0.0);
        rhs.extend(flow.iter().map(|v| -v));
        self.elim.lift(&mut rhs, &disc.boundary_values(self.case, t_new));
        let sol = self.factor.solve(&rhs)?;
        self.flow_prev = Some((t_new, g_new));
        Ok(State { u: sol[..nu].to_vec(), xi: sol[nu..nu + nxi].to_vec(), p: sol[nu + nxi..].to_vec(), t: t_new })
    }

    /// Runs `T / dt` steps from `initial` and returns the final state.
    pub fn run(&mut self, initial: State) -> Result<State, SchemeError> {
        self.run_with(initial, |_| {})
    }

    /// Like [`Self::run`], calling `observe` after every step.
    pub fn run_with(&mut self, initial: State, mut observe: impl FnMut(&State)) -> Result<State, SchemeError> {
        let mut state = initial;
        for n in 0..self.config.steps() {
            state = self.step(&state)?;
            // avoid drift from repeated addition
            state.t = (n + 1) as f64 * self.config.dt;
            observe(&state);
        }
        Ok(state)
    }
}

/// Projects the initial data and advances to the final time.
pub fn run(disc: &Discretization, case: &ManufacturedCase, config: SchemeConfig) -> Result<State, SchemeError> {
    let initial = initial_state(disc, case)?;
    TimeStepper::new(disc, case, config)?.run(initial)
}
