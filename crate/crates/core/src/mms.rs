//! Manufactured solutions: exact fields, the data they induce, and a
//! finite-difference self-test of the hand-derived closed forms.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::assembly::{AssemblyError, PhysicalParams};
use crate::mesh::{BoundaryRoles, Point, SegmentTag, TagSet};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("Poisson ratio must lie in (0, 0.5), got {0}")]
    PoissonRatio(f64),
    #[error("conductivity must be positive, got {0}")]
    Conductivity(f64),
    #[error(transparent)]
    Params(#[from] AssemblyError),
}

/// Closed-form displacement and pressure with the derivatives the solver needs.
///
/// Index conventions: `grad[i][j] = d_j u_i`, `hessian[i][j][k] = d_j d_k u_i`.
pub trait ExactSolution: Send + Sync {
    fn displacement(&self, x: Point, t: f64) -> Vec2;
    fn displacement_grad(&self, x: Point, t: f64) -> Mat2;
    fn displacement_hessian(&self, x: Point, t: f64) -> [Mat2; 2];
    fn displacement_dt(&self, x: Point, t: f64) -> Vec2;
    fn displacement_dt_grad(&self, x: Point, t: f64) -> Mat2;
    fn pressure(&self, x: Point, t: f64) -> f64;
    fn pressure_grad(&self, x: Point, t: f64) -> Vec2;
    fn pressure_hessian(&self, x: Point, t: f64) -> Mat2;
    fn pressure_dt(&self, x: Point, t: f64) -> f64;
}

/// An exact solution with its material parameters, boundary roles and final time.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub exact: Arc<dyn ExactSolution>,
    pub params: PhysicalParams,
    pub roles: BoundaryRoles,
    pub final_time: f64,
}

impl fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("roles", &self.roles)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

fn trace(m: Mat2) -> f64 {
    m[0][0] + m[1][1]
}

impl ManufacturedCase {
    pub fn displacement(&self, x: Point, t: f64) -> Vec2 {
        self.exact.displacement(x, t)
    }

    pub fn pressure(&self, x: Point, t: f64) -> f64 {
        self.exact.pressure(x, t)
    }

    pub fn divergence(&self, x: Point, t: f64) -> f64 {
        trace(self.exact.displacement_grad(x, t))
    }

    /// `xi = alpha p - lambda div u`.
    pub fn total_pressure(&self, x: Point, t: f64) -> f64 {
        self.params.alpha * self.pressure(x, t) - self.params.lambda * self.divergence(x, t)
    }

    pub fn total_pressure_dt(&self, x: Point, t: f64) -> f64 {
        self.params.alpha * self.exact.pressure_dt(x, t) - self.params.lambda * trace(self.exact.displacement_dt_grad(x, t))
    }

    /// `grad div u`.
    fn grad_div(&self, x: Point, t: f64) -> Vec2 {
        let h = self.exact.displacement_hessian(x, t);
        [h[0][0][0] + h[1][1][0], h[0][0][1] + h[1][1][1]]
    }

    pub fn total_pressure_grad(&self, x: Point, t: f64) -> Vec2 {
        let gp = self.exact.pressure_grad(x, t);
        let gd = self.grad_div(x, t);
        [self.params.alpha * gp[0] - self.params.lambda * gd[0], self.params.alpha * gp[1] - self.params.lambda * gd[1]]
    }

    /// `2 mu eps(u) - xi I`.
    pub fn stress(&self, x: Point, t: f64) -> Mat2 {
        let g = self.exact.displacement_grad(x, t);
        let xi = self.total_pressure(x, t);
        let mu = self.params.mu;
        let off = mu * (g[0][1] + g[1][0]);
        [[2.0 * mu * g[0][0] - xi, off], [off, 2.0 * mu * g[1][1] - xi]]
    }

    /// `f = -2 mu div eps(u) + grad xi`.
    pub fn body_force(&self, x: Point, t: f64) -> Vec2 {
        let h = self.exact.displacement_hessian(x, t);
        let gd = self.grad_div(x, t);
        let gxi = self.total_pressure_grad(x, t);
        let mu = self.params.mu;
        let mut f = [0.0; 2];
        for i in 0..2 {
            let lap = h[i][0][0] + h[i][1][1];
            f[i] = -mu * (lap + gd[i]) + gxi[i];
        }
        f
    }

    /// `Q_s = (c0 + alpha^2/lambda) p_t - (alpha/lambda) xi_t - K lap p`.
    pub fn source(&self, x: Point, t: f64) -> f64 {
        let p = &self.params;
        let lap = trace(self.exact.pressure_hessian(x, t));
        p.storage() * self.exact.pressure_dt(x, t) - p.alpha / p.lambda * self.total_pressure_dt(x, t) - p.k * lap
    }

    /// `(2 mu eps(u) - xi I) n`.
    pub fn traction(&self, x: Point, n: Vec2, t: f64) -> Vec2 {
        let s = self.stress(x, t);
        [s[0][0] * n[0] + s[0][1] * n[1], s[1][0] * n[0] + s[1][1] * n[1]]
    }

    /// `K grad p . n`.
    pub fn flux(&self, x: Point, n: Vec2, t: f64) -> f64 {
        let g = self.exact.pressure_grad(x, t);
        self.params.k * (g[0] * n[0] + g[1] * n[1])
    }
}

#[derive(Debug, Clone, Copy)]
struct Example1;

impl ExactSolution for Example1 {
    fn displacement(&self, [x, y]: Point, t: f64) -> Vec2 {
        [0.1 * t.exp() * (x + y.powi(3)), 0.1 * t * t * (x.powi(3) + y.powi(3))]
    }

    fn displacement_grad(&self, [x, y]: Point, t: f64) -> Mat2 {
        let (e, t2) = (t.exp(), t * t);
        [[0.1 * e, 0.3 * e * y * y], [0.3 * t2 * x * x, 0.3 * t2 * y * y]]
    }

    fn displacement_hessian(&self, [x, y]: Point, t: f64) -> [Mat2; 2] {
        let (e, t2) = (t.exp(), t * t);
        [[[0.0, 0.0], [0.0, 0.6 * e * y]], [[0.6 * t2 * x, 0.0], [0.0, 0.6 * t2 * y]]]
    }

    fn displacement_dt(&self, [x, y]: Point, t: f64) -> Vec2 {
        [0.1 * t.exp() * (x + y.powi(3)), 0.2 * t * (x.powi(3) + y.powi(3))]
    }

    fn displacement_dt_grad(&self, [x, y]: Point, t: f64) -> Mat2 {
        let e = t.exp();
        [[0.1 * e, 0.3 * e * y * y], [0.6 * t * x * x, 0.6 * t * y * y]]
    }

    fn pressure(&self, [x, y]: Point, t: f64) -> f64 {
        10.0 * ((x + y) / 10.0).exp() * (1.0 + t.powi(3))
    }

    fn pressure_grad(&self, [x, y]: Point, t: f64) -> Vec2 {
        let g = ((x + y) / 10.0).exp() * (1.0 + t.powi(3));
        [g, g]
    }

    fn pressure_hessian(&self, [x, y]: Point, t: f64) -> Mat2 {
        let h = 0.1 * ((x + y) / 10.0).exp() * (1.0 + t.powi(3));
        [[h, h], [h, h]]
    }

    fn pressure_dt(&self, [x, y]: Point, t: f64) -> f64 {
        30.0 * t * t * ((x + y) / 10.0).exp()
    }
}

/// Spatial part of the second example; every field carries the factor `exp(-t)`.
#[derive(Debug, Clone, Copy)]
struct Example2 {
    /// `1 / (mu + lambda)`.
    a: f64,
}

impl Example2 {
    fn u(&self, [x, y]: Point) -> Vec2 {
        let s = (PI * x).sin() * (PI * y).sin();
        let (s2x, c2x, s2y, c2y) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos(), (2.0 * PI * y).sin(), (2.0 * PI * y).cos());
        [s2y * (c2x - 1.0) + self.a * s, s2x * (1.0 - c2y) + self.a * s]
    }

    fn grad(&self, [x, y]: Point) -> Mat2 {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        let (s2x, c2x, s2y, c2y) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos(), (2.0 * PI * y).sin(), (2.0 * PI * y).cos());
        let (tp, ap) = (2.0 * PI, self.a * PI);
        [
            [-tp * s2y * s2x + ap * cx * sy, tp * c2y * (c2x - 1.0) + ap * sx * cy],
            [tp * c2x * (1.0 - c2y) + ap * cx * sy, tp * s2x * s2y + ap * sx * cy],
        ]
    }

    fn hessian(&self, [x, y]: Point) -> [Mat2; 2] {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        let (s2x, c2x, s2y, c2y) = ((2.0 * PI * x).sin(), (2.0 * PI * x).cos(), (2.0 * PI * y).sin(), (2.0 * PI * y).cos());
        let (fp, ap) = (4.0 * PI * PI, self.a * PI * PI);
        let (ss, cc) = (ap * sx * sy, ap * cx * cy);
        let u1xy = -fp * c2y * s2x + cc;
        let u2xy = fp * c2x * s2y + cc;
        [
            [[-fp * s2y * c2x - ss, u1xy], [u1xy, -fp * s2y * (c2x - 1.0) - ss]],
            [[-fp * s2x * (1.0 - c2y) - ss, u2xy], [u2xy, fp * s2x * c2y - ss]],
        ]
    }

    fn p(&self, [x, y]: Point) -> f64 {
        (PI * x).sin() * (PI * y).sin()
    }

    fn p_grad(&self, [x, y]: Point) -> Vec2 {
        [PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos()]
    }

    fn p_hessian(&self, [x, y]: Point) -> Mat2 {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        let p2 = PI * PI;
        [[-p2 * sx * sy, p2 * cx * cy], [p2 * cx * cy, -p2 * sx * sy]]
    }
}

fn scale2(s: f64, v: Vec2) -> Vec2 {
    [s * v[0], s * v[1]]
}

fn scale22(s: f64, m: Mat2) -> Mat2 {
    [scale2(s, m[0]), scale2(s, m[1])]
}

impl ExactSolution for Example2 {
    fn displacement(&self, x: Point, t: f64) -> Vec2 {
        scale2((-t).exp(), self.u(x))
    }

    fn displacement_grad(&self, x: Point, t: f64) -> Mat2 {
        scale22((-t).exp(), self.grad(x))
    }

    fn displacement_hessian(&self, x: Point, t: f64) -> [Mat2; 2] {
        let e = (-t).exp();
        self.hessian(x).map(|m| scale22(e, m))
    }

    fn displacement_dt(&self, x: Point, t: f64) -> Vec2 {
        scale2(-(-t).exp(), self.u(x))
    }

    fn displacement_dt_grad(&self, x: Point, t: f64) -> Mat2 {
        scale22(-(-t).exp(), self.grad(x))
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        (-t).exp() * self.p(x)
    }

    fn pressure_grad(&self, x: Point, t: f64) -> Vec2 {
        scale2((-t).exp(), self.p_grad(x))
    }

    fn pressure_hessian(&self, x: Point, t: f64) -> Mat2 {
        scale22((-t).exp(), self.p_hessian(x))
    }

    fn pressure_dt(&self, x: Point, t: f64) -> f64 {
        -(-t).exp() * self.p(x)
    }
}

/// Polynomial exact solution for steady-state and consistency checks.
///
/// `u = u0 + t * u1` and `p = p0 + t * p1` with affine spatial parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AffineSolution {
    /// `u_i = c[i][0] + c[i][1] x + c[i][2] y`.
    pub u: [[f64; 3]; 2],
    pub u_rate: [[f64; 3]; 2],
    pub p: [f64; 3],
    pub p_rate: [f64; 3],
}

fn affine(c: &[f64; 3], [x, y]: Point) -> f64 {
    c[0] + c[1] * x + c[2] * y
}

impl ExactSolution for AffineSolution {
    fn displacement(&self, x: Point, t: f64) -> Vec2 {
        [0, 1].map(|i| affine(&self.u[i], x) + t * affine(&self.u_rate[i], x))
    }

    fn displacement_grad(&self, _: Point, t: f64) -> Mat2 {
        [0, 1].map(|i| [self.u[i][1] + t * self.u_rate[i][1], self.u[i][2] + t * self.u_rate[i][2]])
    }

    fn displacement_hessian(&self, _: Point, _: f64) -> [Mat2; 2] {
        [[[0.0; 2]; 2]; 2]
    }

    fn displacement_dt(&self, x: Point, _: f64) -> Vec2 {
        [0, 1].map(|i| affine(&self.u_rate[i], x))
    }

    fn displacement_dt_grad(&self, _: Point, _: f64) -> Mat2 {
        [0, 1].map(|i| [self.u_rate[i][1], self.u_rate[i][2]])
    }

    fn pressure(&self, x: Point, t: f64) -> f64 {
        affine(&self.p, x) + t * affine(&self.p_rate, x)
    }

    fn pressure_grad(&self, _: Point, t: f64) -> Vec2 {
        [self.p[1] + t * self.p_rate[1], self.p[2] + t * self.p_rate[2]]
    }

    fn pressure_hessian(&self, _: Point, _: f64) -> Mat2 {
        [[0.0; 2]; 2]
    }

    fn pressure_dt(&self, x: Point, _: f64) -> f64 {
        affine(&self.p_rate, x)
    }
}

/// Displacement `(0.1 e^t (x + y^3), 0.1 t^2 (x^3 + y^3))` and pressure
/// `10 e^{(x+y)/10} (1 + t^3)` with unit parameters and Dirichlet data on the
/// whole boundary, up to `T = 1`.
pub fn example1() -> ManufacturedCase {
    ManufacturedCase {
        name: "example1".into(),
        exact: Arc::new(Example1),
        params: PhysicalParams::from_lame(1.0, 1.0, 1.0, 1.0, 1.0).expect("unit parameters are valid"),
        roles: BoundaryRoles::all_dirichlet(),
        final_time: 1.0,
    }
}

/// Trigonometric solution decaying like `e^{-t}` with `E = c0 = alpha = 1`,
/// Dirichlet data on the bottom and top sides and natural conditions on the
/// left and right sides, up to `T = 1`.
pub fn example2(nu: f64, k: f64) -> Result<ManufacturedCase, CaseError> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(CaseError::PoissonRatio(nu));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(CaseError::Conductivity(k));
    }
    let params = PhysicalParams::from_young(1.0, nu, 1.0, 1.0, k)?;
    let dirichlet = TagSet::of(&[SegmentTag::Gamma2, SegmentTag::Gamma4]);
    Ok(ManufacturedCase {
        name: format!("example2(nu={nu}, K={k})"),
        exact: Arc::new(Example2 { a: 1.0 / (params.mu + params.lambda) }),
        params,
        roles: BoundaryRoles::new(dirichlet, dirichlet).expect("both role sets are nonempty"),
        final_time: 1.0,
    })
}

/// Finite-difference step used by the self-test.
pub const SELFTEST_STEP: f64 = 1e-3;
/// Default tolerance, relative to `max(1, |value|)`.
pub const SELFTEST_TOLERANCE: f64 = 1e-6;

/// Outcome of [`derived_sources_selftest`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub samples: usize,
    pub tolerance: f64,
    /// Largest scaled residual over every checked quantity.
    pub max_residual: f64,
    /// Quantity and `(x, y, t)` where the largest residual occurred.
    pub worst: (&'static str, [f64; 3]),
    /// Unscaled residual at the worst sample.
    pub worst_abs: f64,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

impl fmt::Display for SelfTestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (what, [x, y, t]) = self.worst;
        write!(
            f,
            "{} over {} samples: max residual {:.3e} (tolerance {:.0e}) in {what} at (x, y, t) = ({x:.6}, {y:.6}, {t:.6})",
            if self.passed() { "pass" } else { "FAIL" },
            self.samples,
            self.max_residual,
            self.tolerance,
        )
    }
}

/// Fourth-order central first derivative.
fn d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative.
fn d2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

/// Checks every closed form of `case` against finite differences of the
/// exact displacement and pressure values, using the two-field form of the
/// balance laws as the oracle for the body force and source.
pub fn derived_sources_selftest(case: &ManufacturedCase, samples: usize, seed: u64) -> SelfTestReport {
    derived_sources_selftest_with(case, samples, seed, SELFTEST_TOLERANCE)
}

pub fn derived_sources_selftest_with(case: &ManufacturedCase, samples: usize, seed: u64, tolerance: f64) -> SelfTestReport {
    let h = SELFTEST_STEP;
    let ex = &*case.exact;
    let prm = case.params;
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut report = SelfTestReport { samples, tolerance, max_residual: 0.0, worst: ("none", [0.0; 3]), worst_abs: 0.0 };
    // `scale` is the magnitude of the terms that produced `want`
    let mut record = |what: &'static str, got: f64, want: f64, scale: f64, at: [f64; 3]| {
        let abs = (got - want).abs();
        let r = abs / scale.max(want.abs()).max(1.0);
        if r > report.max_residual || r.is_nan() {
            report.max_residual = if r.is_nan() { f64::INFINITY } else { r };
            report.worst = (what, at);
            report.worst_abs = abs;
        }
    };

    // sample away from the boundary so stencils stay inside the domain
    let margin = 2.0 * h;
    for _ in 0..samples {
        let (x, y) = (rng.gen_range(margin..1.0 - margin), rng.gen_range(margin..1.0 - margin));
        let t = rng.gen_range(margin..case.final_time);
        let at = [x, y, t];
        let u = |c: usize, px: f64, py: f64, pt: f64| ex.displacement([px, py], pt)[c];
        let p = |px: f64, py: f64, pt: f64| ex.pressure([px, py], pt);

        // derivatives of u by finite differences
        let mut g = [[0.0; 2]; 2];
        let mut hess = [[[0.0; 2]; 2]; 2];
        let mut div_t = 0.0;
        for c in 0..2 {
            g[c][0] = d1(|s| u(c, s, y, t), x, h);
            g[c][1] = d1(|s| u(c, x, s, t), y, h);
            hess[c][0][0] = d2(|s| u(c, s, y, t), x, h);
            hess[c][1][1] = d2(|s| u(c, x, s, t), y, h);
            hess[c][0][1] = d1(|s| d1(|r| u(c, r, s, t), x, h), y, h);
            hess[c][1][0] = hess[c][0][1];
            let dt = d1(|s| u(c, x, y, s), t, h);
            record("displacement time derivative", ex.displacement_dt([x, y], t)[c], dt, 0.0, at);
        }
        div_t += d1(|s| d1(|r| u(0, r, y, s), x, h), t, h);
        div_t += d1(|s| d1(|r| u(1, x, r, s), y, h), t, h);
        let gp = [d1(|s| p(s, y, t), x, h), d1(|s| p(x, s, t), y, h)];
        let lap_p = d2(|s| p(s, y, t), x, h) + d2(|s| p(x, s, t), y, h);
        let p_t = d1(|s| p(x, y, s), t, h);

        let ag = ex.displacement_grad([x, y], t);
        let ah = ex.displacement_hessian([x, y], t);
        for i in 0..2 {
            for j in 0..2 {
                record("displacement gradient", ag[i][j], g[i][j], 0.0, at);
                for k in 0..2 {
                    record("displacement hessian", ah[i][j][k], hess[i][j][k], 0.0, at);
                }
            }
        }
        record("divergence time derivative", trace(ex.displacement_dt_grad([x, y], t)), div_t, 0.0, at);
        let apg = ex.pressure_grad([x, y], t);
        record("pressure gradient", apg[0], gp[0], 0.0, at);
        record("pressure gradient", apg[1], gp[1], 0.0, at);
        record("pressure laplacian", trace(ex.pressure_hessian([x, y], t)), lap_p, 0.0, at);
        record("pressure time derivative", ex.pressure_dt([x, y], t), p_t, 0.0, at);

        // two-field balance: -div sigma(u) + alpha grad p = f
        let div = g[0][0] + g[1][1];
        let xi = prm.alpha * p(x, y, t) - prm.lambda * div;
        let xi_scale = (prm.alpha * p(x, y, t)).abs() + prm.lambda * (g[0][0].abs() + g[1][1].abs());
        record("total pressure", case.total_pressure([x, y], t), xi, xi_scale, at);
        let f = case.body_force([x, y], t);
        for i in 0..2 {
            let lap = hess[i][0][0] + hess[i][1][1];
            let grad_div = hess[0][0][i] + hess[1][1][i];
            let div_sigma = prm.mu * (lap + grad_div) + prm.lambda * grad_div;
            let hess_abs = hess[i][0][0].abs() + hess[i][1][1].abs() + hess[0][0][i].abs() + hess[1][1][i].abs();
            let scale = (prm.mu + prm.lambda) * hess_abs + (prm.alpha * gp[i]).abs();
            record("body force", f[i], -div_sigma + prm.alpha * gp[i], scale, at);
        }
        // two-field flow: d/dt (c0 p + alpha div u) - K lap p = Q_s
        let scale = (prm.c0 * p_t).abs() + (prm.alpha * div_t).abs() + (prm.k * lap_p).abs();
        record("source", case.source([x, y], t), prm.c0 * p_t + prm.alpha * div_t - prm.k * lap_p, scale, at);

        // boundary data against the sampled stress and pressure gradient
        let n = {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            [a.cos(), a.sin()]
        };
        let sigma = |i: usize, j: usize| {
            prm.mu * (g[i][j] + g[j][i]) + if i == j { prm.lambda * div - prm.alpha * p(x, y, t) } else { 0.0 }
        };
        let tr = case.traction([x, y], n, t);
        for i in 0..2 {
            let scale = xi_scale + prm.mu * (g[i][0].abs() + g[i][1].abs() + g[0][i].abs() + g[1][i].abs());
            record("traction", tr[i], sigma(i, 0) * n[0] + sigma(i, 1) * n[1], scale, at);
        }
        record("flux", case.flux([x, y], n, t), prm.k * (gp[0] * n[0] + gp[1] * n[1]), 0.0, at);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_point_values() {
        let c = example1();
        assert_eq!(c.displacement([0.0, 0.0], 0.0)[0], 0.0);
        assert_eq!(c.pressure([0.0, 0.0], 0.0), 10.0);
        let e = 1f64.exp();
        let want = 20.0 * 0.2f64.exp() - (e + 3.0) / 10.0;
        assert!((c.total_pressure([1.0, 1.0], 1.0) - want).abs() < 1e-13);
        assert!(c.roles.traction.is_empty() && c.roles.flux.is_empty());
    }

    #[test]
    fn example2_point_values() {
        let c = example2(0.3, 1.0).unwrap();
        assert!((c.pressure([0.5, 0.5], 0.0) - 1.0).abs() < 1e-15);
        assert!((c.params.mu - 1.0 / 2.6).abs() < 1e-12);
        assert!((c.params.lambda - 0.3 / (1.3 * 0.4)).abs() < 1e-12);
        let (u0, u1) = (c.displacement([0.3, 0.7], 0.0), c.displacement([0.3, 0.7], 1.0));
        for i in 0..2 {
            assert!((u1[i] - (-1f64).exp() * u0[i]).abs() < 1e-15);
        }
        assert!(matches!(example2(0.5, 1.0), Err(CaseError::PoissonRatio(_))));
        assert!(matches!(example2(0.3, 0.0), Err(CaseError::Conductivity(_))));
        assert!(c.roles.traction.contains(SegmentTag::Gamma1) && c.roles.flux.contains(SegmentTag::Gamma3));
    }

    #[test]
    fn three_field_and_two_field_sources_agree() {
        for c in [example1(), example2(0.3, 1.0).unwrap(), example2(0.49999, 1e-6).unwrap()] {
            let p = c.params;
            for &(x, y, t) in &[(0.1, 0.2, 0.3), (0.9, 0.4, 0.8), (0.5, 0.5, 1.0)] {
                let lhs = p.storage() * c.exact.pressure_dt([x, y], t) - p.alpha / p.lambda * c.total_pressure_dt([x, y], t);
                let div_t = trace(c.exact.displacement_dt_grad([x, y], t));
                let rhs = p.c0 * c.exact.pressure_dt([x, y], t) + p.alpha * div_t;
                assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn body_force_matches_two_field_momentum() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        for c in [example1(), example2(0.3, 1.0).unwrap(), example2(0.49999, 1e-6).unwrap()] {
            let p = c.params;
            for _ in 0..50 {
                let (x, t) = ([rng.gen::<f64>(), rng.gen::<f64>()], rng.gen::<f64>());
                let h = c.exact.displacement_hessian(x, t);
                let gp = c.exact.pressure_grad(x, t);
                let f = c.body_force(x, t);
                for a in 0..2 {
                    let lap = h[a][0][0] + h[a][1][1];
                    let grad_div = h[0][a][0] + h[1][a][1];
                    let want = -p.mu * (lap + grad_div) - p.lambda * grad_div + p.alpha * gp[a];
                    let scale = p.lambda * grad_div.abs() + want.abs();
                    assert!((f[a] - want).abs() < 1e-10 * scale.max(1.0), "{} {f:?} {want}", c.name);
                }
            }
        }
    }

    #[test]
    fn example_selftests_pass() {
        for c in [example1(), example2(0.3, 1.0).unwrap(), example2(0.49999, 1e-6).unwrap()] {
            let r = derived_sources_selftest(&c, 50, 11);
            assert!(r.passed(), "{}: {r}", c.name);
        }
        let r = derived_sources_selftest(&ManufacturedCase { exact: Arc::new(AffineSolution::default()), ..example1() }, 5, 1);
        assert!(r.passed() && r.max_residual < 1e-12);
    }

    /// Shifts `d_xx u_1` so the derived body force moves by `+1` in x.
    struct Corrupted {
        inner: Example1,
        shift: f64,
    }

    impl ExactSolution for Corrupted {
        fn displacement(&self, x: Point, t: f64) -> Vec2 {
            self.inner.displacement(x, t)
        }
        fn displacement_grad(&self, x: Point, t: f64) -> Mat2 {
            self.inner.displacement_grad(x, t)
        }
        fn displacement_hessian(&self, x: Point, t: f64) -> [Mat2; 2] {
            let mut h = self.inner.displacement_hessian(x, t);
            h[0][0][0] += self.shift;
            h
        }
        fn displacement_dt(&self, x: Point, t: f64) -> Vec2 {
            self.inner.displacement_dt(x, t)
        }
        fn displacement_dt_grad(&self, x: Point, t: f64) -> Mat2 {
            self.inner.displacement_dt_grad(x, t)
        }
        fn pressure(&self, x: Point, t: f64) -> f64 {
            self.inner.pressure(x, t)
        }
        fn pressure_grad(&self, x: Point, t: f64) -> Vec2 {
            self.inner.pressure_grad(x, t)
        }
        fn pressure_hessian(&self, x: Point, t: f64) -> Mat2 {
            self.inner.pressure_hessian(x, t)
        }
        fn pressure_dt(&self, x: Point, t: f64) -> f64 {
            self.inner.pressure_dt(x, t)
        }
    }

    #[test]
    fn corrupted_body_force_is_caught() {
        let base = example1();
        let shift = -1.0 / (2.0 * base.params.mu + base.params.lambda);
        let bad = ManufacturedCase { exact: Arc::new(Corrupted { inner: Example1, shift }), ..base.clone() };
        let (x, t) = ([0.4, 0.6], 0.5);
        assert!((bad.body_force(x, t)[0] - base.body_force(x, t)[0] - 1.0).abs() < 1e-12);
        let r = derived_sources_selftest(&bad, 20, 5);
        assert!(!r.passed());
        assert_eq!(r.worst.0, "body force");
        assert!((r.worst_abs - 1.0).abs() < 1e-6, "{r}");
    }
}
